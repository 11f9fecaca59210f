#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "srst/audio.hpp"
#include "srst/manifest.hpp"
#include "srst/rng.hpp"

namespace srst {

struct ToySpec {
    int vocab_size = 30;
    int min_sentence_len = 3;
    int max_sentence_len = 12;
    int min_sentences = 2;
    int max_sentences = 5;
    int n_speakers = 8;
    int n_docs = 1000;
    std::uint64_t seed = 1;
    bool write_audio = true;  // word times are exact either way

    std::string to_json() const;
    static ToySpec from_json(const std::string& text);  // missing fields keep defaults
};

// Source vocabulary: "w00".."wNN".
std::string toy_source_word(int id);
int toy_word_id(const std::string& word);  // FormatError on anything else

// The first word of a sentence keys which of two target dictionaries the whole
// sentence uses (lower vocabulary half -> 0, upper half -> 1). The two dictionaries
// draw from disjoint character sets so no subword can leak across them.
int toy_word_class(int id, int vocab_size);
std::string toy_target_word(int id, int dict);

// Dictionary mapping keyed by the first word, then each adjacent pair swapped:
// [w1, w2, w3] -> [m(w2), m(w1), m(w3)].
std::vector<std::string> toy_transform(const std::vector<std::string>& src, int vocab_size);
// The matching total alignment: (2j, 2j+1), (2j+1, 2j), trailing word to itself.
std::vector<std::pair<int, int>> toy_alignment(int n_words);

struct ToySpeaker {
    double gain_db = 0.0;
    double pitch = 1.0;
};
ToySpeaker toy_speaker(int k, int n_speakers);

// Acoustic signature: three tones chosen from nine log-spaced frequencies in
// 500..6000 Hz; per-word duration 150..250 ms; per-word level -26..-6 dBFS except
// for three designated quiet words near -38 dBFS (these sit between the two top
// energy-detection thresholds, so only the most aggressive setting drops them).
std::vector<double> toy_word_freqs(int id);
bool toy_word_quiet(int id);
double toy_word_level_db(int id);
int toy_word_duration_ms(int id);

inline constexpr int kWordGapSamples = 800;       // 50 ms intra-sentence silence
inline constexpr int kSentenceGapSamples = 4800;  // 300 ms inter-sentence silence

struct RenderedSentence {
    std::vector<double> samples;
    std::vector<std::pair<double, double>> word_times;  // seconds, relative to clip start
};
RenderedSentence render_audio(const std::vector<std::string>& words, const ToySpeaker& speaker);

struct ToyCorpus {
    std::vector<ManifestEntry> train, valid, test;
};

// Writes <out_dir>/audio/*.wav (unless write_audio is off) and
// <out_dir>/{train,valid,test}.jsonl; returns the same entries. 90/5/5 split by document.
ToyCorpus gen_corpus(const ToySpec& spec, const std::string& out_dir);

}  // namespace srst
