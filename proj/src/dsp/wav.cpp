#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cryda/dsp.hpp"

namespace cryda::dsp {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
    return std::uint16_t(p[0] | p[1] << 8);
}

}  // namespace

void write_wav(const std::string& path, const AudioClip& clip) {
    if (clip.sample_rate <= 0) throw ParamError("write_wav: sample_rate must be positive");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_wav: cannot open " + path);

    const std::uint32_t n = std::uint32_t(clip.samples.size());
    const std::uint32_t data_bytes = n * 2;
    const std::uint32_t sr = std::uint32_t(clip.sample_rate);

    out.write("RIFF", 4);
    put_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, sr);
    put_u32(out, sr * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.write("data", 4);
    put_u32(out, data_bytes);

    for (float v : clip.samples) {
        const float clamped = std::clamp(v, -1.0f, 1.0f);
        const auto s = std::int16_t(std::lrintf(clamped * 32767.0f));
        put_u16(out, std::uint16_t(s));
    }
    if (!out) throw IoError("write_wav: write failed for " + path);
}

AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw IoError("read_wav: " + path + " is not a RIFF/WAVE file");

    AudioClip clip;
    bool got_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t size = get_u32(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size())
            throw IoError("read_wav: truncated chunk in " + path);

        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (size < 16) throw IoError("read_wav: short fmt chunk in " + path);
            const std::uint16_t format = get_u16(bytes.data() + body);
            const std::uint16_t channels = get_u16(bytes.data() + body + 2);
            const std::uint32_t sr = get_u32(bytes.data() + body + 4);
            const std::uint16_t bits = get_u16(bytes.data() + body + 14);
            if (format != 1 || channels != 1 || bits != 16)
                throw IoError("read_wav: " + path +
                              " must be PCM 16-bit mono, got format=" + std::to_string(format) +
                              " channels=" + std::to_string(channels) +
                              " bits=" + std::to_string(bits));
            clip.sample_rate = int(sr);
            got_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!got_fmt) throw IoError("read_wav: data before fmt in " + path);
            const std::uint32_t count = size / 2;
            clip.samples.resize(count);
            for (std::uint32_t i = 0; i < count; ++i) {
                const auto s = std::int16_t(get_u16(bytes.data() + body + std::size_t(i) * 2));
                clip.samples[i] = float(s) / 32767.0f;
            }
            return clip;
        }
        pos = body + size + (size & 1);  // chunks are word-aligned
    }
    throw IoError("read_wav: no data chunk in " + path);
}

}  // namespace cryda::dsp
