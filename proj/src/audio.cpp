#include "srst/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "srst/errors.hpp"

namespace srst {
namespace {

uint64_t read_le_bytes(std::istream& in, int nbytes, const std::string& what) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), nbytes))
        throw FormatError("read_wav: truncated " + what);
    uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) v |= uint64_t(buf[i]) << (8 * i);
    return v;
}

void write_le_bytes(std::ostream& out, uint64_t v, int nbytes) {
    for (int i = 0; i < nbytes; ++i) out.put(char((v >> (8 * i)) & 0xff));
}

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("read_wav: cannot open '" + path + "'");

    char tag[4];
    if (!in.read(tag, 4) || std::memcmp(tag, "RIFF", 4) != 0)
        throw FormatError("read_wav: not a RIFF file: '" + path + "'");
    read_le_bytes(in, 4, "riff size");
    if (!in.read(tag, 4) || std::memcmp(tag, "WAVE", 4) != 0)
        throw FormatError("read_wav: not a WAVE file: '" + path + "'");

    bool have_fmt = false, have_data = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    AudioClip clip;
    while (in.read(tag, 4)) {
        auto size = uint32_t(read_le_bytes(in, 4, "chunk size"));
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (size < 16) throw FormatError("read_wav: fmt chunk too small");
            format = uint16_t(read_le_bytes(in, 2, "fmt"));
            channels = uint16_t(read_le_bytes(in, 2, "fmt"));
            sample_rate = uint32_t(read_le_bytes(in, 4, "fmt"));
            read_le_bytes(in, 4, "fmt");  // byte rate
            read_le_bytes(in, 2, "fmt");  // block align
            bits = uint16_t(read_le_bytes(in, 2, "fmt"));
            in.ignore(size - 16);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw FormatError("read_wav: data chunk before fmt chunk");
            if (format != 1 || bits != 16)
                throw FormatError("read_wav: only 16-bit PCM supported in '" + path + "'");
            if (channels != 1)
                throw FormatError("read_wav: only mono supported, got " + std::to_string(channels) +
                                  " channels in '" + path + "'");
            uint32_t n = size / 2;
            clip.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                auto raw = int16_t(read_le_bytes(in, 2, "sample data"));
                clip.samples[i] = double(raw) / 32768.0;
            }
            clip.sample_rate = int(sample_rate);
            have_data = true;
        } else {
            in.ignore(size);
            if (!in) throw FormatError("read_wav: truncated chunk in '" + path + "'");
        }
        if (size % 2) in.ignore(1);  // chunks are word-aligned
    }
    if (!have_data) throw FormatError("read_wav: missing data chunk in '" + path + "'");
    return clip;
}

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("write_wav: cannot open '" + path + "'");
    auto data_bytes = uint32_t(samples.size() * 2);
    out.write("RIFF", 4);
    write_le_bytes(out, 36 + data_bytes, 4);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le_bytes(out, 16, 4);
    write_le_bytes(out, 1, 2);  // PCM
    write_le_bytes(out, 1, 2);  // mono
    write_le_bytes(out, uint32_t(sample_rate), 4);
    write_le_bytes(out, uint32_t(sample_rate) * 2, 4);
    write_le_bytes(out, 2, 2);   // block align
    write_le_bytes(out, 16, 2);  // bits per sample
    out.write("data", 4);
    write_le_bytes(out, data_bytes, 4);
    for (double s : samples) {
        double c = std::clamp(s, -1.0, 1.0);
        write_le_bytes(out, uint16_t(int16_t(std::lrint(c * 32767.0))), 2);
    }
    if (!out) throw FormatError("write_wav: write failed for '" + path + "'");
}

}  // namespace srst
