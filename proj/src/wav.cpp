#include "simulstream/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "simulstream/common.hpp"

namespace simulstream {

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

void wr_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void wr_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char(v >> 8));
}

} // namespace

WavData read_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open WAV file: " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const uint8_t* p = reinterpret_cast<const uint8_t*>(data.data());
    const size_t n = data.size();

    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw FormatError("not a RIFF/WAVE file: " + path.string());

    WavData wav;
    uint16_t channels = 0, bits = 0, format = 0;
    bool got_fmt = false, got_data = false;
    size_t pos = 12;
    while (pos + 8 <= n) {
        const char* id = reinterpret_cast<const char*>(p + pos);
        const uint32_t size = rd_u32(p + pos + 4);
        const size_t body = pos + 8;
        if (body + size > n) throw FormatError("truncated WAV chunk: " + path.string());
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw FormatError("malformed fmt chunk");
            format = rd_u16(p + body);
            channels = rd_u16(p + body + 2);
            wav.sample_rate = rd_u32(p + body + 4);
            bits = rd_u16(p + body + 14);
            got_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            wav.samples.resize(size / 2);
            std::memcpy(wav.samples.data(), p + body, wav.samples.size() * 2);
            got_data = true;
        }
        pos = body + size + (size & 1); // chunks are word aligned
    }
    if (!got_fmt || !got_data) throw FormatError("WAV missing fmt or data chunk");
    if (format != 1 || bits != 16) throw FormatError("only 16-bit PCM WAV is supported");
    if (channels != 1) throw FormatError("only mono WAV is supported (no downmixing)");
    return wav;
}

void write_wav(const std::filesystem::path& path, std::span<const int16_t> samples,
               uint32_t sample_rate) {
    std::string out;
    const uint32_t data_bytes = uint32_t(samples.size() * 2);
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    wr_u32(out, 36 + data_bytes);
    out.append("WAVE");
    out.append("fmt ");
    wr_u32(out, 16);
    wr_u16(out, 1); // PCM
    wr_u16(out, 1); // mono
    wr_u32(out, sample_rate);
    wr_u32(out, sample_rate * 2); // byte rate
    wr_u16(out, 2);               // block align
    wr_u16(out, 16);              // bits
    out.append("data");
    wr_u32(out, data_bytes);
    out.append(reinterpret_cast<const char*>(samples.data()), data_bytes);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write WAV file: " + path.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

std::vector<int16_t> to_pcm16(std::span<const float> samples) {
    std::vector<int16_t> out(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        const float v = std::clamp(samples[i], -1.0f, 1.0f);
        out[i] = int16_t(std::lround(v * 32767.0f));
    }
    return out;
}

} // namespace simulstream
