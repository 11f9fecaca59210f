#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace srst {

struct BleuReport {
    double bleu = 0.0;  // 0..100
    std::array<double, 4> precisions{};  // clipped n-gram precisions, 1..4-gram
    double brevity_penalty = 1.0;
    long long hyp_tokens = 0;
    long long ref_tokens = 0;
};

// Corpus-level BLEU: clipped n-gram precisions pooled over all pairs, geometric
// mean of 1..4-gram precisions, brevity penalty exp(1 - ref/hyp) when the
// hypothesis corpus is shorter. A zero precision enters the mean as 1e-16; an
// n-gram order with no hypothesis n-grams at all counts as precision 1.
BleuReport bleu(const std::vector<std::vector<std::string>>& hyps,
                const std::vector<std::vector<std::string>>& refs);

struct TerPair {
    int edits = 0;   // shifts + remaining insert/delete/substitute edits
    int shifts = 0;
    int ref_tokens = 0;
};

// Translation edit rate for one pair: greedy block-shift search (apply the
// shift with the largest edit-distance reduction; ties leftmost, then longest
// block, then smallest destination) plus token edit distance.
TerPair ter_pair(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Corpus TER percent: total edits / total reference tokens * 100.
double ter(const std::vector<std::vector<std::string>>& hyps,
           const std::vector<std::vector<std::string>>& refs);

// Token edit distance (insert/delete/substitute, unit costs).
int edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

}  // namespace srst
