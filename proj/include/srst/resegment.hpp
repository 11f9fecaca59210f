#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "srst/manifest.hpp"
#include "srst/rng.hpp"

namespace srst {

// One split word index per sentence, drawn uniformly within that sentence.
// Indices are in document-word coordinates and strictly increasing.
std::vector<int> pick_splits(const Document& doc, Rng& rng);

// A fragment of a document: its source words and audio span, the target words
// its source words project onto, and the previous fragment's target words
// after boundary-overlap stripping.
struct ResegmentedSample {
    std::vector<std::string> src_words;
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<std::string> tgt_words;
    std::vector<std::string> ctx_words;
    std::string doc_id;
};

struct ResegmentResult {
    std::vector<ResegmentedSample> samples;
    int fragments = 0;
    int discarded = 0;  // fragments whose source words had no alignment at all
};

// Cuts the document at the given split indices. Fragments span from one split
// word to the word before the next; words before the first split form a
// leading fragment. Audio cut points fall at the midpoint between adjacent
// word times. Fragments with no aligned target words are discarded.
ResegmentResult build_samples(const Document& doc, const std::vector<int>& splits);

// Target span covered by source words [src_begin, src_end): the [min, max]
// closure of all aligned target indices, or absent when none are aligned.
std::optional<std::pair<int, int>> project_target(
    int src_begin, int src_end, const std::vector<std::pair<int, int>>& align);

// Repeatedly removes the longest context suffix that equals a target prefix,
// until the result shares no boundary overlap with the target.
std::vector<std::string> strip_overlap(const std::vector<std::string>& ctx,
                                       const std::vector<std::string>& tgt);

struct ResegmentStats {
    int documents = 0;
    int fragments = 0;
    int samples = 0;
    int discarded = 0;
};

// Reads a sentence-level manifest, cuts every document at per-sentence random
// split words (per-document streams derived from the seed and doc id), and
// writes the fragment manifest. Output idx restarts at 0 within each document.
ResegmentStats resegment_manifest(const std::string& in_path, const std::string& out_path,
                                  std::uint64_t seed);

}  // namespace srst
