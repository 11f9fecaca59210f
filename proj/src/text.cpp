#include "srst/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "srst/errors.hpp"

namespace srst {
namespace {

// curly quotes and dashes mapped to their ASCII forms
const std::vector<std::pair<std::string, std::string>> kAsciiMap = {
    {"\xe2\x80\x98", "'"}, {"\xe2\x80\x99", "'"}, {"\xe2\x80\x9c", "\""},
    {"\xe2\x80\x9d", "\""}, {"\xe2\x80\x93", "-"}, {"\xe2\x80\x94", "-"},
};

}  // namespace

std::vector<std::string> utf8_split(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        auto b = static_cast<unsigned char>(s[i]);
        size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xe ? 3 : (b >> 3) == 0x1e ? 4 : 1;
        len = std::min(len, s.size() - i);
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string> normalize(const std::string& text) {
    std::string mapped;
    mapped.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        bool hit = false;
        for (const auto& [from, to] : kAsciiMap) {
            if (text.compare(i, from.size(), from) == 0) {
                mapped += to;
                i += from.size();
                hit = true;
                break;
            }
        }
        if (!hit) mapped += text[i++];
    }

    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) tokens.push_back(word);
        word.clear();
    };
    for (char c : mapped) {
        auto b = static_cast<unsigned char>(c);
        if (b < 0x80 && std::isspace(b)) {
            flush();
        } else if (b < 0x80 && std::ispunct(b)) {
            flush();
            tokens.push_back(std::string(1, char(std::tolower(b))));
        } else {
            word += b < 0x80 ? char(std::tolower(b)) : c;
        }
    }
    flush();
    return tokens;
}

namespace {

std::vector<std::string> word_symbols(const std::string& word) {
    auto chars = utf8_split(word);
    if (!chars.empty()) chars.back() += kWordEnd;
    return chars;
}

// merges adjacent (left, right) occurrences, left-to-right, in place
void merge_pair(std::vector<std::string>& symbols, const std::string& left,
                const std::string& right) {
    size_t w = 0;
    for (size_t r = 0; r < symbols.size();) {
        if (r + 1 < symbols.size() && symbols[r] == left && symbols[r + 1] == right) {
            symbols[w++] = left + right;
            r += 2;
        } else {
            if (w != r) symbols[w] = std::move(symbols[r]);
            ++w;
            ++r;
        }
    }
    symbols.resize(w);
}

}  // namespace

BpeModel bpe_learn(const std::vector<std::vector<std::string>>& corpus, int n_merges) {
    if (n_merges < 0)
        throw UsageError("bpe_learn: n_merges must be nonnegative, got " +
                         std::to_string(n_merges));
    std::map<std::string, long long> freq;
    for (const auto& line : corpus)
        for (const auto& tok : line) ++freq[tok];
    if (freq.empty()) throw UsageError("bpe_learn: empty corpus");

    BpeModel model;
    {
        std::map<std::string, bool> seen;
        for (const auto& [word, f] : freq)
            for (const auto& sym : word_symbols(word)) seen[sym] = true;
        for (const auto& [sym, on] : seen) model.alphabet.push_back(sym);
    }

    // unique words as symbol sequences, in deterministic (sorted-word) order
    std::vector<std::pair<std::vector<std::string>, long long>> words;
    for (const auto& [word, f] : freq) words.push_back({word_symbols(word), f});

    for (int step = 0; step < n_merges; ++step) {
        std::map<std::pair<std::string, std::string>, long long> pairs;
        for (const auto& [symbols, f] : words)
            for (size_t i = 0; i + 1 < symbols.size(); ++i)
                pairs[{symbols[i], symbols[i + 1]}] += f;
        std::pair<std::string, std::string> best;
        long long best_count = 0;
        for (const auto& [pair, count] : pairs) {
            if (count > best_count) {  // map order breaks ties lexicographically
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;
        model.merges.push_back(best);
        for (auto& [symbols, f] : words) merge_pair(symbols, best.first, best.second);
    }
    return model;
}

Vocabulary Vocabulary::build(const BpeModel& model) {
    Vocabulary v;
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) {
        v.ids_[t] = int(v.tokens_.size());
        v.tokens_.push_back(t);
    }
    auto push = [&v](const std::string& tok) {
        if (v.ids_.count(tok)) return;
        v.ids_[tok] = int(v.tokens_.size());
        v.tokens_.push_back(tok);
    };
    for (const auto& sym : model.alphabet) push(sym);
    for (const auto& [l, r] : model.merges) push(l + r);
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size())
        throw UsageError("vocabulary: id " + std::to_string(id) + " outside [0, " +
                         std::to_string(size()) + ")");
    return tokens_[size_t(id)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("vocabulary: cannot open '" + path + "'");
    for (int i = 0; i < size(); ++i) out << tokens_[size_t(i)] << "\t" << i << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("vocabulary: cannot open '" + path + "'");
    Vocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError("vocabulary: missing tab at " + path + ":" +
                              std::to_string(lineno));
        std::string tok = line.substr(0, tab);
        int id = std::stoi(line.substr(tab + 1));
        if (id != int(v.tokens_.size()))
            throw FormatError("vocabulary: non-contiguous id at " + path + ":" +
                              std::to_string(lineno));
        v.ids_[tok] = id;
        v.tokens_.push_back(tok);
    }
    return v;
}

std::vector<std::string> bpe_segment(const std::vector<std::string>& tokens,
                                     const BpeModel& model) {
    std::vector<std::string> out;
    for (const auto& tok : tokens) {
        auto symbols = word_symbols(tok);
        for (const auto& [l, r] : model.merges) {
            if (symbols.size() < 2) break;
            merge_pair(symbols, l, r);
        }
        out.insert(out.end(), symbols.begin(), symbols.end());
    }
    return out;
}

std::vector<int> bpe_apply(const std::vector<std::string>& tokens, const BpeModel& model,
                           const Vocabulary& vocab, bool frame) {
    std::vector<int> ids;
    if (frame) ids.push_back(Vocabulary::kBos);
    for (const auto& sub : bpe_segment(tokens, model)) ids.push_back(vocab.id(sub));
    if (frame) ids.push_back(Vocabulary::kEos);
    return ids;
}

std::vector<std::string> bpe_decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string joined;
    for (int id : ids) {
        if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
        joined += vocab.token(id);  // throws on out-of-range ids
    }
    std::vector<std::string> words;
    size_t start = 0;
    while (start <= joined.size()) {
        auto end = joined.find(kWordEnd, start);
        if (end == std::string::npos) {
            if (start < joined.size()) words.push_back(joined.substr(start));
            break;
        }
        if (end > start) words.push_back(joined.substr(start, end - start));
        start = end + kWordEnd.size();
    }
    return words;
}

void save_merges(const std::string& path, const BpeModel& model) {
    std::ofstream out(path);
    if (!out) throw FormatError("save_merges: cannot open '" + path + "'");
    for (const auto& [l, r] : model.merges) out << l << " " << r << "\n";
}

BpeModel load_merges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_merges: cannot open '" + path + "'");
    BpeModel model;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size())
            throw FormatError("load_merges: bad merge at " + path + ":" +
                              std::to_string(lineno));
        model.merges.push_back({line.substr(0, space), line.substr(space + 1)});
    }
    return model;
}

}  // namespace srst
