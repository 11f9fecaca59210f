#include "srst/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "srst/errors.hpp"

namespace srst {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw FormatError("read_feature_cache: truncated " + what);
    return uint32_t(buf[0]) | uint32_t(buf[1]) << 8 | uint32_t(buf[2]) << 16 |
           uint32_t(buf[3]) << 24;
}

void write_u32(std::ostream& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(char((v >> (8 * i)) & 0xff));
}

}  // namespace

void fft_radix2(std::vector<std::complex<double>>& a) {
    size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw UsageError("fft_radix2: size must be a power of two, got " + std::to_string(n));
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * kPi / double(len);
        std::complex<double> step(std::cos(ang), std::sin(ang));
        for (size_t base = 0; base < n; base += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                auto u = a[base + k];
                auto v = a[base + k + len / 2] * w;
                a[base + k] = u + v;
                a[base + k + len / 2] = u - v;
                w *= step;
            }
        }
    }
}

std::vector<double> mel_center_frequencies(int n_mels, double f_min, double f_max) {
    double lo = to_mel(f_min), hi = to_mel(f_max);
    std::vector<double> centers(static_cast<size_t>(n_mels));
    for (int i = 1; i <= n_mels; ++i)
        centers[size_t(i - 1)] = to_hz(lo + (hi - lo) * i / (n_mels + 1));
    return centers;
}

std::vector<std::vector<std::pair<int, double>>> mel_filterbank(int n_fft, int sample_rate,
                                                                int n_mels, double f_min,
                                                                double f_max) {
    double lo = to_mel(f_min), hi = to_mel(f_max);
    std::vector<double> pts(static_cast<size_t>(n_mels) + 2);
    for (int i = 0; i < n_mels + 2; ++i) pts[size_t(i)] = to_hz(lo + (hi - lo) * i / (n_mels + 1));

    std::vector<std::vector<std::pair<int, double>>> banks(static_cast<size_t>(n_mels));
    int n_bins = n_fft / 2 + 1;
    for (int m = 0; m < n_mels; ++m) {
        double left = pts[size_t(m)], center = pts[size_t(m) + 1], right = pts[size_t(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            double f = double(k) * sample_rate / n_fft;
            double w = 0.0;
            if (f >= left && f <= center && center > left)
                w = (f - left) / (center - left);
            else if (f > center && f <= right && right > center)
                w = (right - f) / (right - center);
            if (w > 0.0) banks[size_t(m)].push_back({k, w});
        }
    }
    return banks;
}

FeatureMatrix log_mel(const AudioClip& clip) {
    if (clip.sample_rate != kSampleRate)
        throw FormatError("log_mel: expected " + std::to_string(kSampleRate) + " Hz audio, got " +
                          std::to_string(clip.sample_rate));
    FeatureMatrix out;
    out.d = kFeatureDim;
    auto n = int64_t(clip.samples.size());
    if (n < kWindowSamples) return out;
    out.t = int((n - kWindowSamples) / kStrideSamples + 1);
    out.v.assign(size_t(out.t) * size_t(out.d), 0.0);

    // pre-emphasis over the whole clip: y[i] = x[i] - 0.97 x[i-1], y[0] = x[0]
    std::vector<double> emph(clip.samples.size());
    emph[0] = clip.samples[0];
    for (size_t i = 1; i < emph.size(); ++i)
        emph[i] = clip.samples[i] - 0.97 * clip.samples[i - 1];

    static const std::vector<double> hann = [] {
        std::vector<double> w(kWindowSamples);
        for (int i = 0; i < kWindowSamples; ++i)
            w[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (kWindowSamples - 1));
        return w;
    }();
    constexpr int kNfft = 512;
    static const auto filters = mel_filterbank(kNfft, kSampleRate, kFeatureDim, 0.0, 8000.0);

    std::vector<std::complex<double>> buf(kNfft);
    for (int fr = 0; fr < out.t; ++fr) {
        size_t off = size_t(fr) * kStrideSamples;
        for (int i = 0; i < kWindowSamples; ++i)
            buf[size_t(i)] = emph[off + size_t(i)] * hann[size_t(i)];
        for (int i = kWindowSamples; i < kNfft; ++i) buf[size_t(i)] = 0.0;
        fft_radix2(buf);
        for (int m = 0; m < kFeatureDim; ++m) {
            double e = 0.0;
            for (const auto& [bin, w] : filters[size_t(m)]) e += w * std::norm(buf[size_t(bin)]);
            out.at(fr, m) = std::log(std::max(e, 1e-10));
        }
    }
    return out;
}

void SpeakerStatsTable::add(const std::string& speaker, const FeatureMatrix& f) {
    if (f.d != kFeatureDim && f.t > 0)
        throw DimensionError("speaker_stats: expected " + std::to_string(kFeatureDim) +
                             " feature dims, got " + std::to_string(f.d));
    auto& acc = speakers_[speaker];
    for (Acc* a : {&acc, &global_}) {
        if (a->sum.empty()) {
            a->sum.assign(kFeatureDim, 0.0);
            a->sq.assign(kFeatureDim, 0.0);
        }
        for (int t = 0; t < f.t; ++t) {
            for (int k = 0; k < f.d; ++k) {
                double x = f.at(t, k);
                a->sum[size_t(k)] += x;
                a->sq[size_t(k)] += x * x;
            }
        }
        a->count += f.t;
    }
}

SpeakerStats SpeakerStatsTable::to_stats(const Acc& a) {
    SpeakerStats s;
    s.count = a.count;
    s.mean.resize(a.sum.size());
    s.var.resize(a.sum.size());
    for (size_t k = 0; k < a.sum.size(); ++k) {
        s.mean[k] = a.sum[k] / double(a.count);
        s.var[k] = std::max(0.0, a.sq[k] / double(a.count) - s.mean[k] * s.mean[k]);
    }
    return s;
}

SpeakerStats SpeakerStatsTable::lookup(const std::string& speaker) const {
    auto it = speakers_.find(speaker);
    if (it != speakers_.end() && it->second.count > 0) return to_stats(it->second);
    if (global_.count > 0) return to_stats(global_);
    throw LookupError("speaker_stats: no statistics for speaker '" + speaker +
                      "' and no corpus fallback");
}

void SpeakerStatsTable::save(const std::string& path) const {
    nlohmann::json j;
    j["global"] = {{"count", global_.count}, {"sum", global_.sum}, {"sq", global_.sq}};
    auto& sp = j["speakers"] = nlohmann::json::object();
    for (const auto& [name, acc] : speakers_)
        sp[name] = {{"count", acc.count}, {"sum", acc.sum}, {"sq", acc.sq}};
    std::ofstream out(path);
    if (!out) throw FormatError("speaker_stats: cannot open '" + path + "'");
    out << j.dump(2) << "\n";
}

SpeakerStatsTable SpeakerStatsTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("speaker_stats: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("speaker_stats: bad json in '" + path + "': " + e.what());
    }
    SpeakerStatsTable table;
    auto parse = [](const nlohmann::json& o, Acc& a) {
        a.count = o.at("count").get<long long>();
        a.sum = o.at("sum").get<std::vector<double>>();
        a.sq = o.at("sq").get<std::vector<double>>();
    };
    parse(j.at("global"), table.global_);
    for (const auto& [name, o] : j.at("speakers").items()) parse(o, table.speakers_[name]);
    return table;
}

FeatureMatrix speaker_normalize(const FeatureMatrix& f, const SpeakerStats& stats) {
    if (f.t > 0 && int(stats.mean.size()) != f.d)
        throw DimensionError("speaker_normalize: stats have " +
                             std::to_string(stats.mean.size()) + " dims, features have " +
                             std::to_string(f.d));
    FeatureMatrix out = f;
    for (int t = 0; t < f.t; ++t)
        for (int k = 0; k < f.d; ++k)
            out.at(t, k) =
                (f.at(t, k) - stats.mean[size_t(k)]) / std::sqrt(stats.var[size_t(k)] + 1e-8);
    return out;
}

FeatureMatrix spec_augment(const FeatureMatrix& f, Rng& rng, int f_width, int t_width, int n_f,
                           int n_t) {
    FeatureMatrix out = f;
    f_width = std::max(0, f_width);
    t_width = std::max(0, t_width);
    for (int i = 0; i < n_f; ++i) {
        int w = std::min(int(rng.uniform_int(uint64_t(f_width) + 1)), f.d);
        int start = int(rng.uniform_int(uint64_t(f.d - w) + 1));
        for (int t = 0; t < out.t; ++t)
            for (int k = start; k < start + w; ++k) out.at(t, k) = 0.0;
    }
    for (int i = 0; i < n_t; ++i) {
        int w = std::min(int(rng.uniform_int(uint64_t(t_width) + 1)), f.t);
        int start = int(rng.uniform_int(uint64_t(f.t - w) + 1));
        for (int t = start; t < start + w; ++t)
            for (int k = 0; k < out.d; ++k) out.at(t, k) = 0.0;
    }
    return out;
}

void write_feature_cache(const std::string& path, const FeatureMatrix& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("write_feature_cache: cannot open '" + path + "'");
    out.write("SRSTFEAT", 8);
    write_u32(out, uint32_t(f.t));
    write_u32(out, uint32_t(f.d));
    for (double x : f.v) write_u32(out, std::bit_cast<uint32_t>(float(x)));
    if (!out) throw FormatError("write_feature_cache: write failed for '" + path + "'");
}

FeatureMatrix read_feature_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("read_feature_cache: cannot open '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "SRSTFEAT", 8) != 0)
        throw FormatError("read_feature_cache: bad magic in '" + path + "'");
    FeatureMatrix f;
    f.t = int(read_u32(in, "frame count"));
    f.d = int(read_u32(in, "feature dim"));
    f.v.resize(size_t(f.t) * size_t(f.d));
    for (auto& x : f.v) x = double(std::bit_cast<float>(read_u32(in, "feature data")));
    return f;
}

}  // namespace srst
