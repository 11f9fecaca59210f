#include "srst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "srst/errors.hpp"

namespace srst {

namespace {

// n-gram counts as joined strings; '\x1f' cannot appear in tokens read from text.
std::map<std::string, long long> ngram_counts(const std::vector<std::string>& words, int n) {
    std::map<std::string, long long> counts;
    if (static_cast<int>(words.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i) {
        std::string key = words[i];
        for (int k = 1; k < n; ++k) {
            key += '\x1f';
            key += words[i + static_cast<size_t>(k)];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

BleuReport bleu(const std::vector<std::vector<std::string>>& hyps,
                const std::vector<std::vector<std::string>>& refs) {
    if (refs.empty()) throw UsageError("bleu: empty reference corpus");
    if (hyps.size() != refs.size())
        throw UsageError("bleu: hypothesis/reference count mismatch");

    BleuReport report;
    std::array<long long, 4> matched{};
    std::array<long long, 4> total{};
    for (size_t i = 0; i < hyps.size(); ++i) {
        report.hyp_tokens += static_cast<long long>(hyps[i].size());
        report.ref_tokens += static_cast<long long>(refs[i].size());
        for (int n = 1; n <= 4; ++n) {
            auto h = ngram_counts(hyps[i], n);
            auto r = ngram_counts(refs[i], n);
            for (const auto& [gram, count] : h) {
                total[static_cast<size_t>(n - 1)] += count;
                auto it = r.find(gram);
                if (it != r.end())
                    matched[static_cast<size_t>(n - 1)] += std::min(count, it->second);
            }
        }
    }
    if (report.ref_tokens == 0) throw UsageError("bleu: reference corpus has no tokens");
    if (report.hyp_tokens == 0) {
        report.precisions = {0.0, 0.0, 0.0, 0.0};
        report.brevity_penalty = 0.0;
        report.bleu = 0.0;
        return report;
    }

    double log_sum = 0.0;
    for (size_t n = 0; n < 4; ++n) {
        double p = total[n] == 0 ? 1.0
                                 : static_cast<double>(matched[n]) / static_cast<double>(total[n]);
        report.precisions[n] = p;
        log_sum += std::log(p > 0.0 ? p : 1e-16);
    }
    report.brevity_penalty =
        report.hyp_tokens < report.ref_tokens
            ? std::exp(1.0 - static_cast<double>(report.ref_tokens) /
                                 static_cast<double>(report.hyp_tokens))
            : 1.0;
    report.bleu = 100.0 * report.brevity_penalty * std::exp(log_sum / 4.0);
    return report;
}

int edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

TerPair ter_pair(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    TerPair result;
    result.ref_tokens = static_cast<int>(ref.size());
    std::vector<std::string> cur = hyp;
    for (;;) {
        const int base = edit_distance(cur, ref);
        if (base == 0) break;
        const size_t n = cur.size();
        int best_red = 0;
        std::vector<std::string> best;
        // enumeration order realizes the tie-break: leftmost start, then
        // longest block, then smallest destination; strict > keeps the first
        for (size_t start = 0; start < n && best_red < base; ++start) {
            for (size_t len = n - start; len >= 1; --len) {
                for (size_t dst = 0; dst + len <= n; ++dst) {
                    if (dst == start) continue;
                    std::vector<std::string> cand;
                    cand.reserve(n);
                    // remove [start, start+len), insert the block at dst
                    for (size_t i = 0; i < n; ++i)
                        if (i < start || i >= start + len) cand.push_back(cur[i]);
                    cand.insert(cand.begin() + static_cast<std::ptrdiff_t>(dst),
                                cur.begin() + static_cast<std::ptrdiff_t>(start),
                                cur.begin() + static_cast<std::ptrdiff_t>(start + len));
                    const int red = base - edit_distance(cand, ref);
                    if (red > best_red) {
                        best_red = red;
                        best = std::move(cand);
                        if (best_red == base) break;  // cannot improve further
                    }
                }
                if (best_red == base) break;
            }
        }
        if (best_red < 1) break;
        cur = std::move(best);
        ++result.shifts;
    }
    result.edits = result.shifts + edit_distance(cur, ref);
    return result;
}

double ter(const std::vector<std::vector<std::string>>& hyps,
           const std::vector<std::vector<std::string>>& refs) {
    if (refs.empty()) throw UsageError("ter: empty reference corpus");
    if (hyps.size() != refs.size()) throw UsageError("ter: hypothesis/reference count mismatch");
    long long edits = 0, ref_tokens = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        auto pair = ter_pair(hyps[i], refs[i]);
        edits += pair.edits;
        ref_tokens += pair.ref_tokens;
    }
    if (ref_tokens == 0) throw UsageError("ter: reference corpus has no tokens");
    return 100.0 * static_cast<double>(edits) / static_cast<double>(ref_tokens);
}

}  // namespace srst
