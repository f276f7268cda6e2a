#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace simulstream {

struct WavData {
    uint32_t sample_rate = 0;
    std::vector<int16_t> samples; // mono PCM16
};

// Minimal RIFF/WAVE reader: mono 16-bit PCM only, no resampling.
WavData read_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, std::span<const int16_t> samples,
               uint32_t sample_rate);

// Float [-1, 1] to PCM16 with clipping.
std::vector<int16_t> to_pcm16(std::span<const float> samples);

} // namespace simulstream
