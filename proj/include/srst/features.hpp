#pragma once

#include <complex>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srst/audio.hpp"
#include "srst/rng.hpp"

namespace srst {

inline constexpr int kFeatureDim = 40;
inline constexpr int kSampleRate = 16000;
inline constexpr int kWindowSamples = 400;  // 25 ms
inline constexpr int kStrideSamples = 160;  // 10 ms

// Log-Mel features: rows are 10 ms frames, columns the 40 Mel bands.
struct FeatureMatrix {
    int t = 0;
    int d = 0;
    std::vector<double> v;  // row-major t x d

    double& at(int row, int col) { return v[size_t(row) * size_t(d) + size_t(col)]; }
    double at(int row, int col) const { return v[size_t(row) * size_t(d) + size_t(col)]; }
};

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

// Triangular Mel filters (HTK mel scale) as sparse (fft_bin, weight) lists per band.
std::vector<std::vector<std::pair<int, double>>> mel_filterbank(int n_fft, int sample_rate,
                                                                int n_mels, double f_min,
                                                                double f_max);
std::vector<double> mel_center_frequencies(int n_mels, double f_min, double f_max);

// Pre-emphasis 0.97, 25 ms Hann window, 10 ms stride, 512-point FFT, 40 Mel bands
// over 0-8000 Hz, natural log with floor 1e-10. Clips shorter than one window give t=0.
FeatureMatrix log_mel(const AudioClip& clip);

struct SpeakerStats {
    std::vector<double> mean;  // length kFeatureDim
    std::vector<double> var;   // population variance, length kFeatureDim
    long long count = 0;
};

// Per-speaker feature statistics with a corpus-wide fallback for unseen speakers.
class SpeakerStatsTable {
  public:
    void add(const std::string& speaker, const FeatureMatrix& f);
    // Stats for the speaker, or the corpus-wide stats if unseen; empty table is a LookupError.
    SpeakerStats lookup(const std::string& speaker) const;
    bool has(const std::string& speaker) const { return speakers_.count(speaker) > 0; }
    bool empty() const { return global_.count == 0; }

    void save(const std::string& path) const;
    static SpeakerStatsTable load(const std::string& path);

  private:
    struct Acc {
        std::vector<double> sum, sq;
        long long count = 0;
    };
    static SpeakerStats to_stats(const Acc& a);
    std::map<std::string, Acc> speakers_;
    Acc global_;
};

// (x - mean) / sqrt(var + 1e-8) per coefficient.
FeatureMatrix speaker_normalize(const FeatureMatrix& f, const SpeakerStats& stats);

// Zeroes n_f frequency bands of width <= f_width and n_t time spans of width <= t_width.
// Training-time augmentation only; masks are clipped to the matrix bounds.
FeatureMatrix spec_augment(const FeatureMatrix& f, Rng& rng, int f_width, int t_width, int n_f,
                           int n_t);

// Flat binary cache: magic "SRSTFEAT", u32 t, u32 d, then t*d little-endian f32, row-major.
void write_feature_cache(const std::string& path, const FeatureMatrix& f);
FeatureMatrix read_feature_cache(const std::string& path);

}  // namespace srst
