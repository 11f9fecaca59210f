#pragma once

#include <optional>
#include <vector>

#include "srst/audio.hpp"

namespace srst {

struct VadConfig {
    int frame_ms = 20;          // one of 10, 20, 30
    int aggressiveness = 2;     // 0..3, higher filters more
    int hangover_frames = 15;   // non-speech frames tolerated inside a segment
};

struct Segment {
    double start_s = 0.0;
    double end_s = 0.0;
};

// Energy rule: speech iff 20*log10(rms) exceeds the aggressiveness threshold
// (-50/-45/-40/-35 dBFS for levels 0..3). All-zero frames are never speech.
bool frame_decision(const std::vector<double>& frame, const VadConfig& cfg);

// Maximal runs of speech frames with gaps <= hangover_frames bridged; boundaries on
// the frame grid; a trailing partial frame is ignored. Silent clips give [].
std::vector<Segment> segment_stream(const AudioClip& clip, const VadConfig& cfg);

struct SegmentationReport {
    double pct_filtered_audio = 100.0;
    long long num_segments = 0;
    std::optional<double> max_len_s;
    std::optional<double> min_len_s;
};

SegmentationReport report(const std::vector<Segment>& segments, double total_duration);

struct SweepEntry {
    VadConfig config;
    SegmentationReport stats;
    bool retained = false;
};

// Runs all 12 (frame_ms, aggressiveness) combinations over the clip set, pooling
// segments across clips. A config is discarded when its longest segment exceeds 60 s
// or it produces more than twice ref_segment_count segments.
std::vector<SweepEntry> sweep_and_filter(const std::vector<AudioClip>& clips, int hangover_ms,
                                         long long ref_segment_count);

}  // namespace srst
