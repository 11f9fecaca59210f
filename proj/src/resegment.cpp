#include "srst/resegment.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

#include "srst/errors.hpp"

namespace srst {

namespace {

// FNV-1a, so per-document streams depend only on the doc id, not on some
// platform-defined std::hash.
std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::vector<int> pick_splits(const Document& doc, Rng& rng) {
    const int n = static_cast<int>(doc.src_words.size());
    if (n == 0) throw UsageError("pick_splits: document '" + doc.doc_id + "' has no source words");
    if (doc.sentence_src_start.empty() || doc.sentence_src_start.front() != 0)
        throw UsageError("pick_splits: document '" + doc.doc_id + "' has no sentence starts");
    std::vector<int> splits;
    splits.reserve(doc.sentence_src_start.size());
    for (size_t s = 0; s < doc.sentence_src_start.size(); ++s) {
        const int begin = doc.sentence_src_start[s];
        const int end = s + 1 < doc.sentence_src_start.size() ? doc.sentence_src_start[s + 1] : n;
        if (begin >= end) throw UsageError("pick_splits: empty sentence in '" + doc.doc_id + "'");
        splits.push_back(begin + static_cast<int>(rng.uniform_int(end - begin)));
    }
    return splits;
}

std::optional<std::pair<int, int>> project_target(
    int src_begin, int src_end, const std::vector<std::pair<int, int>>& align) {
    int lo = std::numeric_limits<int>::max();
    int hi = std::numeric_limits<int>::min();
    for (const auto& [s, t] : align) {
        if (s >= src_begin && s < src_end) {
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
    }
    if (lo > hi) return std::nullopt;
    return std::make_pair(lo, hi);
}

std::vector<std::string> strip_overlap(const std::vector<std::string>& ctx,
                                       const std::vector<std::string>& tgt) {
    std::vector<std::string> out = ctx;
    for (;;) {
        size_t best = 0;
        const size_t max_k = std::min(out.size(), tgt.size());
        for (size_t k = max_k; k >= 1; --k) {
            if (std::equal(out.end() - static_cast<std::ptrdiff_t>(k), out.end(), tgt.begin())) {
                best = k;
                break;
            }
        }
        if (best == 0) return out;
        out.resize(out.size() - best);
    }
}

ResegmentResult build_samples(const Document& doc, const std::vector<int>& splits) {
    const int n = static_cast<int>(doc.src_words.size());
    if (n == 0) throw UsageError("build_samples: document '" + doc.doc_id + "' has no source words");
    if (doc.word_times.size() != static_cast<size_t>(n))
        throw UsageError("build_samples: word times missing for '" + doc.doc_id + "'");
    std::vector<int> bounds;
    bounds.push_back(0);
    for (int s : splits) {
        if (s < 0 || s >= n) throw UsageError("build_samples: split index out of range");
        if (s != bounds.back()) {
            if (s < bounds.back()) throw UsageError("build_samples: splits not sorted");
            bounds.push_back(s);
        }
    }
    bounds.push_back(n);

    // Audio cut between word i-1 and word i lands midway through the gap.
    auto cut_before = [&](int i) {
        if (i == 0) return doc.word_times.front().first;
        if (i == n) return doc.word_times.back().second;
        return 0.5 * (doc.word_times[static_cast<size_t>(i) - 1].second +
                      doc.word_times[static_cast<size_t>(i)].first);
    };

    ResegmentResult result;
    result.fragments = static_cast<int>(bounds.size()) - 1;
    std::optional<std::pair<int, int>> prev_span;
    for (size_t f = 0; f + 1 < bounds.size(); ++f) {
        const int begin = bounds[f];
        const int end = bounds[f + 1];
        auto span = project_target(begin, end, doc.align);
        if (!span) {
            ++result.discarded;
            prev_span = std::nullopt;
            continue;
        }
        ResegmentedSample sample;
        sample.doc_id = doc.doc_id;
        sample.src_words.assign(doc.src_words.begin() + begin, doc.src_words.begin() + end);
        sample.start_s = cut_before(begin);
        sample.end_s = cut_before(end);
        sample.tgt_words.assign(doc.tgt_words.begin() + span->first,
                                doc.tgt_words.begin() + span->second + 1);
        if (f > 0 && prev_span) {
            std::vector<std::string> ctx(doc.tgt_words.begin() + prev_span->first,
                                         doc.tgt_words.begin() + prev_span->second + 1);
            sample.ctx_words = strip_overlap(ctx, sample.tgt_words);
        }
        prev_span = span;
        result.samples.push_back(std::move(sample));
    }
    return result;
}

ResegmentStats resegment_manifest(const std::string& in_path, const std::string& out_path,
                                  std::uint64_t seed) {
    auto entries = read_manifest(in_path);
    auto docs = group_documents(entries);
    // Speaker rides along so downstream normalization keeps working.
    std::vector<ManifestEntry> out;
    ResegmentStats stats;
    const Rng root(seed);
    for (const auto& doc : docs) {
        Rng rng = root.derive(fnv1a64(doc.doc_id));
        auto splits = pick_splits(doc, rng);
        auto result = build_samples(doc, splits);
        ++stats.documents;
        stats.fragments += result.fragments;
        stats.discarded += result.discarded;
        int idx = 0;
        for (const auto& sample : result.samples) {
            ManifestEntry e;
            e.audio = doc.audio;
            e.start_s = sample.start_s;
            e.end_s = sample.end_s;
            e.src = join_words(sample.src_words);
            e.tgt = join_words(sample.tgt_words);
            e.ctx = join_words(sample.ctx_words);
            e.doc_id = doc.doc_id;
            e.idx = idx++;
            e.speaker = doc.speaker;
            out.push_back(std::move(e));
            ++stats.samples;
        }
    }
    write_manifest(out_path, out);
    return stats;
}

}  // namespace srst
