#include "srst/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "srst/errors.hpp"
#include "srst/features.hpp"

namespace srst {

std::string ToySpec::to_json() const {
    nlohmann::json j;
    j["vocab_size"] = vocab_size;
    j["min_sentence_len"] = min_sentence_len;
    j["max_sentence_len"] = max_sentence_len;
    j["min_sentences"] = min_sentences;
    j["max_sentences"] = max_sentences;
    j["n_speakers"] = n_speakers;
    j["n_docs"] = n_docs;
    j["seed"] = seed;
    j["write_audio"] = write_audio;
    return j.dump();
}

ToySpec ToySpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("toy spec: ") + e.what());
    }
    ToySpec s;
    try {
        s.vocab_size = j.value("vocab_size", s.vocab_size);
        s.min_sentence_len = j.value("min_sentence_len", s.min_sentence_len);
        s.max_sentence_len = j.value("max_sentence_len", s.max_sentence_len);
        s.min_sentences = j.value("min_sentences", s.min_sentences);
        s.max_sentences = j.value("max_sentences", s.max_sentences);
        s.n_speakers = j.value("n_speakers", s.n_speakers);
        s.n_docs = j.value("n_docs", s.n_docs);
        s.seed = j.value("seed", s.seed);
        s.write_audio = j.value("write_audio", s.write_audio);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("toy spec: ") + e.what());
    }
    return s;
}
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr int kMaxVocab = 84;  // C(9,3) three-tone signatures
const std::string kDict0Chars = "abcdefghij";
const std::string kDict1Chars = "klmnopqrst";

void check_spec(const ToySpec& s) {
    if (s.vocab_size < 2)
        throw UsageError("gen_corpus: vocab_size must be at least 2, got " +
                         std::to_string(s.vocab_size));
    if (s.vocab_size > kMaxVocab)
        throw UsageError("gen_corpus: vocab_size capped at " + std::to_string(kMaxVocab) +
                         " by the signature inventory, got " + std::to_string(s.vocab_size));
    if (s.min_sentence_len < 1 || s.max_sentence_len < s.min_sentence_len)
        throw UsageError("gen_corpus: bad sentence length range");
    if (s.min_sentences < 1 || s.max_sentences < s.min_sentences)
        throw UsageError("gen_corpus: bad sentences-per-document range");
    if (s.n_speakers < 1) throw UsageError("gen_corpus: need at least one speaker");
    if (s.n_docs < 1) throw UsageError("gen_corpus: need at least one document");
}

}  // namespace

std::string toy_source_word(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%02d", id);
    return buf;
}

int toy_word_id(const std::string& word) {
    if (word.size() < 2 || word[0] != 'w' ||
        !std::all_of(word.begin() + 1, word.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw FormatError("toy_word_id: not a toy source word: '" + word + "'");
    return std::stoi(word.substr(1));
}

int toy_word_class(int id, int vocab_size) { return id * 2 < vocab_size ? 0 : 1; }

std::string toy_target_word(int id, int dict) {
    if (id < 0 || id >= 100) throw UsageError("toy_target_word: id out of range");
    const std::string& chars = dict == 0 ? kDict0Chars : kDict1Chars;
    return std::string(1, chars[size_t(id / 10)]) + chars[size_t(id % 10)];
}

std::vector<std::string> toy_transform(const std::vector<std::string>& src, int vocab_size) {
    if (src.empty()) return {};
    int dict = toy_word_class(toy_word_id(src.front()), vocab_size);
    std::vector<std::string> out(src.size());
    auto m = [&](size_t i) { return toy_target_word(toy_word_id(src[i]), dict); };
    size_t n = src.size();
    for (size_t j = 0; j + 1 < n; j += 2) {
        out[j] = m(j + 1);
        out[j + 1] = m(j);
    }
    if (n % 2) out[n - 1] = m(n - 1);
    return out;
}

std::vector<std::pair<int, int>> toy_alignment(int n_words) {
    std::vector<std::pair<int, int>> align;
    for (int j = 0; j + 1 < n_words; j += 2) {
        align.push_back({j, j + 1});
        align.push_back({j + 1, j});
    }
    if (n_words % 2) align.push_back({n_words - 1, n_words - 1});
    return align;
}

ToySpeaker toy_speaker(int k, int n_speakers) {
    if (n_speakers <= 1) return {0.0, 1.0};
    double frac = double(k) / (n_speakers - 1);
    return {-1.5 + 3.0 * frac, 0.95 + 0.10 * frac};
}

std::vector<double> toy_word_freqs(int id) {
    // id-th 3-of-9 combination in lexicographic order, over log-spaced frequencies
    static const std::vector<double> base = [] {
        std::vector<double> f(9);
        for (int k = 0; k < 9; ++k) f[size_t(k)] = 500.0 * std::pow(12.0, k / 8.0);
        return f;
    }();
    int seen = 0;
    for (int i = 0; i < 7; ++i)
        for (int j = i + 1; j < 8; ++j)
            for (int k = j + 1; k < 9; ++k)
                if (seen++ == id) return {base[size_t(i)], base[size_t(j)], base[size_t(k)]};
    throw UsageError("toy_word_freqs: id out of range: " + std::to_string(id));
}

bool toy_word_quiet(int id) { return id == 5 || id == 17 || id == 26; }

double toy_word_level_db(int id) {
    if (toy_word_quiet(id)) return -38.0;
    return -26.0 + 20.0 * double((id * 11) % 27) / 26.0;
}

int toy_word_duration_ms(int id) { return 150 + (id * 37) % 101; }

namespace {

std::vector<double> render_word(int id, const ToySpeaker& spk) {
    auto n = size_t(toy_word_duration_ms(id) * (kSampleRate / 1000));
    auto freqs = toy_word_freqs(id);
    double rms = std::pow(10.0, (toy_word_level_db(id) + spk.gain_db) / 20.0);
    double amp = rms / std::sqrt(1.5);  // three equal incoherent tones
    std::vector<double> s(n, 0.0);
    for (double f : freqs) {
        double w = 2.0 * kPi * f * spk.pitch / kSampleRate;
        for (size_t i = 0; i < n; ++i) s[i] += amp * std::sin(w * double(i));
    }
    return s;
}

}  // namespace

RenderedSentence render_audio(const std::vector<std::string>& words, const ToySpeaker& speaker) {
    RenderedSentence out;
    constexpr auto gap = size_t(kWordGapSamples);
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out.samples.insert(out.samples.end(), gap, 0.0);
        auto w = render_word(toy_word_id(words[i]), speaker);
        double start = double(out.samples.size()) / kSampleRate;
        out.samples.insert(out.samples.end(), w.begin(), w.end());
        out.word_times.push_back({start, double(out.samples.size()) / kSampleRate});
    }
    return out;
}

ToyCorpus gen_corpus(const ToySpec& spec, const std::string& out_dir) {
    check_spec(spec);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "audio");

    Rng root(spec.seed);
    std::vector<ManifestEntry> all;
    for (int d = 0; d < spec.n_docs; ++d) {
        Rng rng = root.derive(uint64_t(d));
        int spk_id = int(rng.uniform_int(spec.n_speakers));
        ToySpeaker spk = toy_speaker(spk_id, spec.n_speakers);
        int n_sent =
            spec.min_sentences + int(rng.uniform_int(spec.max_sentences - spec.min_sentences + 1));

        char doc_name[32];
        std::snprintf(doc_name, sizeof(doc_name), "doc%05d", d);
        // Manifests store audio paths relative to the manifest file so runs are
        // byte-identical regardless of output directory.
        std::string rel_audio = "audio/" + std::string(doc_name) + ".wav";
        std::string wav_path = (fs::path(out_dir) / rel_audio).string();

        std::vector<double> doc_samples;
        size_t offset = 0;
        constexpr auto sent_gap = size_t(kSentenceGapSamples);
        for (int s = 0; s < n_sent; ++s) {
            int len = spec.min_sentence_len +
                      int(rng.uniform_int(spec.max_sentence_len - spec.min_sentence_len + 1));
            std::vector<std::string> words(static_cast<size_t>(len));
            for (auto& w : words) w = toy_source_word(int(rng.uniform_int(spec.vocab_size)));

            if (s > 0) {
                offset += sent_gap;
                if (spec.write_audio) doc_samples.insert(doc_samples.end(), sent_gap, 0.0);
            }

            ManifestEntry e;
            e.audio = rel_audio;
            e.doc_id = doc_name;
            e.idx = s;
            e.speaker = "spk" + std::to_string(spk_id);
            e.src = join_words(words);
            e.tgt = join_words(toy_transform(words, spec.vocab_size));
            e.align = toy_alignment(len);

            // word times from the same integer sample layout the renderer uses
            size_t local = 0;
            constexpr auto gap = size_t(kWordGapSamples);
            for (int i = 0; i < len; ++i) {
                if (i) local += gap;
                auto dur = size_t(toy_word_duration_ms(toy_word_id(words[size_t(i)])) *
                                  (kSampleRate / 1000));
                e.src_times.push_back({double(offset + local) / kSampleRate,
                                       double(offset + local + dur) / kSampleRate});
                local += dur;
            }
            e.start_s = e.src_times.front().first;
            e.end_s = e.src_times.back().second;

            if (spec.write_audio) {
                auto rendered = render_audio(words, spk);
                doc_samples.insert(doc_samples.end(), rendered.samples.begin(),
                                   rendered.samples.end());
            }
            offset += local;
            all.push_back(std::move(e));
        }
        if (spec.write_audio) write_wav(wav_path, doc_samples, kSampleRate);
    }

    // 90/5/5 split by document index
    int n_train_docs = spec.n_docs * 90 / 100;
    int n_valid_docs = spec.n_docs * 95 / 100 - n_train_docs;
    ToyCorpus corpus;
    for (auto& e : all) {
        int d = std::stoi(e.doc_id.substr(3));
        auto& bucket = d < n_train_docs                  ? corpus.train
                       : d < n_train_docs + n_valid_docs ? corpus.valid
                                                         : corpus.test;
        bucket.push_back(std::move(e));
    }
    write_manifest((fs::path(out_dir) / "train.jsonl").string(), corpus.train);
    write_manifest((fs::path(out_dir) / "valid.jsonl").string(), corpus.valid);
    write_manifest((fs::path(out_dir) / "test.jsonl").string(), corpus.test);
    return corpus;
}

}  // namespace srst
