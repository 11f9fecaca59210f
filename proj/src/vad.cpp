#include "srst/vad.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "srst/errors.hpp"
#include "srst/features.hpp"

namespace srst {
namespace {

constexpr double kThresholdDb[4] = {-50.0, -45.0, -40.0, -35.0};

int frame_samples(const VadConfig& cfg) {
    if (cfg.frame_ms != 10 && cfg.frame_ms != 20 && cfg.frame_ms != 30)
        throw UsageError("vad: frame_ms must be 10, 20 or 30, got " +
                         std::to_string(cfg.frame_ms));
    if (cfg.aggressiveness < 0 || cfg.aggressiveness > 3)
        throw UsageError("vad: aggressiveness must be in 0..3, got " +
                         std::to_string(cfg.aggressiveness));
    if (cfg.hangover_frames < 0)
        throw UsageError("vad: hangover_frames must be nonnegative, got " +
                         std::to_string(cfg.hangover_frames));
    return kSampleRate / 1000 * cfg.frame_ms;
}

bool decide(const double* x, int n, const VadConfig& cfg) {
    double sq = 0.0;
    for (int i = 0; i < n; ++i) sq += x[i] * x[i];
    double rms = std::sqrt(sq / n);
    if (rms <= 0.0) return false;
    return 20.0 * std::log10(rms) > kThresholdDb[cfg.aggressiveness];
}

}  // namespace

bool frame_decision(const std::vector<double>& frame, const VadConfig& cfg) {
    int n = frame_samples(cfg);
    if (int(frame.size()) != n)
        throw UsageError("frame_decision: expected " + std::to_string(n) + " samples, got " +
                         std::to_string(frame.size()));
    return decide(frame.data(), n, cfg);
}

std::vector<Segment> segment_stream(const AudioClip& clip, const VadConfig& cfg) {
    int fs = frame_samples(cfg);
    auto n_frames = long(clip.samples.size() / size_t(fs));
    std::vector<Segment> segments;
    long run_start = -1, last_speech = -1;
    auto close = [&] {
        if (run_start >= 0)
            segments.push_back({double(run_start) * fs / kSampleRate,
                                double(last_speech + 1) * fs / kSampleRate});
    };
    for (long i = 0; i < n_frames; ++i) {
        if (!decide(clip.samples.data() + i * fs, fs, cfg)) continue;
        if (run_start >= 0 && i - last_speech - 1 <= cfg.hangover_frames) {
            last_speech = i;  // gap bridged
        } else {
            close();
            run_start = i;
            last_speech = i;
        }
    }
    close();
    return segments;
}

SegmentationReport report(const std::vector<Segment>& segments, double total_duration) {
    if (total_duration <= 0.0)
        throw UsageError("report: total_duration must be positive, got " +
                         std::to_string(total_duration));
    SegmentationReport r;
    r.num_segments = long(segments.size());
    double covered = 0.0;
    for (const auto& s : segments) {
        double len = s.end_s - s.start_s;
        covered += len;
        r.max_len_s = std::max(r.max_len_s.value_or(len), len);
        r.min_len_s = std::min(r.min_len_s.value_or(len), len);
    }
    r.pct_filtered_audio = std::clamp(100.0 * (1.0 - covered / total_duration), 0.0, 100.0);
    return r;
}

std::vector<SweepEntry> sweep_and_filter(const std::vector<AudioClip>& clips, int hangover_ms,
                                         long long ref_segment_count) {
    if (clips.empty()) throw UsageError("sweep_and_filter: empty clip set");
    std::vector<SweepEntry> entries;
    for (int frame_ms : {10, 20, 30}) {
        for (int agg = 0; agg <= 3; ++agg) {
            VadConfig cfg{frame_ms, agg, hangover_ms / frame_ms};
            std::vector<Segment> pooled;
            double total = 0.0;
            for (const auto& clip : clips) {
                auto segs = segment_stream(clip, cfg);
                pooled.insert(pooled.end(), segs.begin(), segs.end());
                total += double(clip.samples.size()) / kSampleRate;
            }
            SweepEntry e;
            e.config = cfg;
            e.stats = report(pooled, total);
            e.retained = e.stats.max_len_s.value_or(0.0) <= 60.0 &&
                         e.stats.num_segments <= 2 * ref_segment_count;
            entries.push_back(e);
        }
    }
    return entries;
}

}  // namespace srst
