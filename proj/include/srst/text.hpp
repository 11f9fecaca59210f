#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace srst {

// Lowercases, maps curly quotes/dashes to ASCII, splits punctuation into standalone
// tokens, and collapses whitespace runs. Empty text gives an empty list.
std::vector<std::string> normalize(const std::string& text);

// Splits a UTF-8 string into one string per code point.
std::vector<std::string> utf8_split(const std::string& s);

// End-of-word convention: the last character of every word carries a "▁" suffix.
inline const std::string kWordEnd = "\xe2\x96\x81";

struct BpeModel {
    std::vector<std::pair<std::string, std::string>> merges;  // ordered, replayed in order
    std::vector<std::string> alphabet;  // initial symbols seen at learn time, sorted
};

// Greedy highest-frequency adjacent-pair merges; ties broken by lexicographic order of
// the pair; stops early once no pair occurs at least twice.
BpeModel bpe_learn(const std::vector<std::vector<std::string>>& corpus, int n_merges);

class Vocabulary {
  public:
    static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;

    // Reserved ids, then the alphabet (sorted), then merge outputs in creation order.
    static Vocabulary build(const BpeModel& model);

    int id(const std::string& token) const;  // kUnk when absent
    const std::string& token(int id) const;  // UsageError when out of range
    int size() const { return int(tokens_.size()); }

    void save(const std::string& path) const;  // "token<TAB>id" lines
    static Vocabulary load(const std::string& path);

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

// Subword strings for one word-token list (merge replay, no id mapping).
std::vector<std::string> bpe_segment(const std::vector<std::string>& tokens,
                                     const BpeModel& model);

// Subword ids; unknown subwords map to unk. frame adds bos/eos around the sequence.
std::vector<int> bpe_apply(const std::vector<std::string>& tokens, const BpeModel& model,
                           const Vocabulary& vocab, bool frame);

// Joins subwords on the end-of-word marker; pad/bos/eos are dropped.
std::vector<std::string> bpe_decode(const std::vector<int>& ids, const Vocabulary& vocab);

// One merge per line, "left right", ordered. The alphabet is not persisted here; a
// reloaded model pairs with a vocabulary loaded from its own file.
void save_merges(const std::string& path, const BpeModel& model);
BpeModel load_merges(const std::string& path);

}  // namespace srst
