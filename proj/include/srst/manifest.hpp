#pragma once

#include <string>
#include <utility>
#include <vector>

namespace srst {

// One JSONL manifest line. src/tgt/ctx hold space-joined word tokens. The oracle
// fields (src_times, align, speaker) are carried by toy-corpus manifests and consumed
// by the resegmenter; they survive rewriting when present.
struct ManifestEntry {
    std::string audio;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string src;
    std::string tgt;
    std::string ctx;
    std::string doc_id;
    int idx = 0;

    std::vector<std::pair<double, double>> src_times;  // absolute seconds in `audio`
    std::vector<std::pair<int, int>> align;            // (src word idx, tgt word idx)
    std::string speaker;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Audio paths in manifests are relative to the manifest file; absolute paths pass through.
std::string resolve_audio_path(const std::string& manifest_path, const std::string& audio);

std::vector<std::string> split_words(const std::string& s);
std::string join_words(const std::vector<std::string>& words);

// A sentence-aligned document assembled from its manifest entries: word lists are
// concatenated across sentences and alignments remapped to document-level indices.
struct Document {
    std::string doc_id;
    std::string audio;
    std::string speaker;
    std::vector<std::string> src_words;
    std::vector<std::pair<double, double>> word_times;
    std::vector<std::string> tgt_words;
    std::vector<std::pair<int, int>> align;
    std::vector<int> sentence_src_start;  // per sentence, index of its first source word
    std::vector<int> sentence_tgt_start;
};

// Groups entries by doc_id (order of first appearance), sorting each group by idx.
// Requires contiguous idx, a single audio path per document, and per-word times.
std::vector<Document> group_documents(const std::vector<ManifestEntry>& entries);

}  // namespace srst
