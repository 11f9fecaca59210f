#pragma once

#include <string>
#include <vector>

namespace srst {

// Mono PCM audio with samples in [-1, 1).
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 16000;
};

// RIFF/WAVE reader: PCM 16-bit little-endian, mono. Anything else is a FormatError.
AudioClip read_wav(const std::string& path);

// Writes PCM 16-bit little-endian mono; samples are clamped to [-1, 1] before quantization.
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);

}  // namespace srst
