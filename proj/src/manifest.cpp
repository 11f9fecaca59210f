#include "srst/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "srst/errors.hpp"

namespace srst {

using nlohmann::json;

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

std::string resolve_audio_path(const std::string& manifest_path, const std::string& audio) {
    std::filesystem::path p(audio);
    if (p.is_absolute()) return audio;
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_manifest: cannot open '" + path + "'");
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("read_manifest: bad json at " + path + ":" +
                              std::to_string(lineno) + ": " + e.what());
        }
        ManifestEntry e;
        try {
            e.audio = j.at("audio").get<std::string>();
            e.start_s = j.at("start_s").get<double>();
            e.end_s = j.at("end_s").get<double>();
            e.src = j.at("src").get<std::string>();
            e.tgt = j.at("tgt").get<std::string>();
            e.ctx = j.at("ctx").get<std::string>();
            e.doc_id = j.at("doc_id").get<std::string>();
            e.idx = j.at("idx").get<int>();
            if (j.contains("src_times"))
                for (const auto& t : j.at("src_times"))
                    e.src_times.push_back({t.at(0).get<double>(), t.at(1).get<double>()});
            if (j.contains("align"))
                for (const auto& a : j.at("align"))
                    e.align.push_back({a.at(0).get<int>(), a.at(1).get<int>()});
            if (j.contains("speaker")) e.speaker = j.at("speaker").get<std::string>();
        } catch (const json::exception& ex) {
            throw FormatError("read_manifest: missing or mistyped field at " + path + ":" +
                              std::to_string(lineno) + ": " + ex.what());
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_manifest: cannot open '" + path + "'");
    for (const auto& e : entries) {
        json j;
        j["audio"] = e.audio;
        j["start_s"] = e.start_s;
        j["end_s"] = e.end_s;
        j["src"] = e.src;
        j["tgt"] = e.tgt;
        j["ctx"] = e.ctx;
        j["doc_id"] = e.doc_id;
        j["idx"] = e.idx;
        if (!e.src_times.empty()) {
            auto& arr = j["src_times"] = json::array();
            for (const auto& [a, b] : e.src_times) arr.push_back({a, b});
        }
        if (!e.align.empty()) {
            auto& arr = j["align"] = json::array();
            for (const auto& [a, b] : e.align) arr.push_back({a, b});
        }
        if (!e.speaker.empty()) j["speaker"] = e.speaker;
        out << j.dump() << "\n";
    }
    if (!out) throw FormatError("write_manifest: write failed for '" + path + "'");
}

std::vector<Document> group_documents(const std::vector<ManifestEntry>& entries) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const ManifestEntry*>> groups;
    for (const auto& e : entries) {
        if (!groups.count(e.doc_id)) order.push_back(e.doc_id);
        groups[e.doc_id].push_back(&e);
    }

    std::vector<Document> docs;
    for (const auto& id : order) {
        auto& group = groups[id];
        std::sort(group.begin(), group.end(),
                  [](const ManifestEntry* a, const ManifestEntry* b) { return a->idx < b->idx; });
        Document d;
        d.doc_id = id;
        d.audio = group.front()->audio;
        d.speaker = group.front()->speaker;
        for (size_t k = 0; k < group.size(); ++k) {
            const ManifestEntry& e = *group[k];
            if (e.idx != int(k))
                throw FormatError("group_documents: document '" + id +
                                  "' has non-contiguous idx " + std::to_string(e.idx));
            if (e.audio != d.audio)
                throw FormatError("group_documents: document '" + id +
                                  "' references multiple audio files");
            auto src = split_words(e.src);
            auto tgt = split_words(e.tgt);
            if (e.src_times.size() != src.size())
                throw FormatError("group_documents: document '" + id + "' sentence " +
                                  std::to_string(k) + " has " + std::to_string(e.src_times.size()) +
                                  " word times for " + std::to_string(src.size()) + " words");
            int src_off = int(d.src_words.size());
            int tgt_off = int(d.tgt_words.size());
            d.sentence_src_start.push_back(src_off);
            d.sentence_tgt_start.push_back(tgt_off);
            d.src_words.insert(d.src_words.end(), src.begin(), src.end());
            d.tgt_words.insert(d.tgt_words.end(), tgt.begin(), tgt.end());
            d.word_times.insert(d.word_times.end(), e.src_times.begin(), e.src_times.end());
            for (const auto& [si, ti] : e.align) {
                if (si < 0 || si >= int(src.size()) || ti < 0 || ti >= int(tgt.size()))
                    throw FormatError("group_documents: document '" + id +
                                      "' has out-of-range alignment");
                d.align.push_back({src_off + si, tgt_off + ti});
            }
        }
        for (size_t i = 1; i < d.word_times.size(); ++i)
            if (d.word_times[i].first < d.word_times[i - 1].second - 1e-9)
                throw FormatError("group_documents: document '" + id +
                                  "' has non-monotone word times");
        docs.push_back(std::move(d));
    }
    return docs;
}

}  // namespace srst
