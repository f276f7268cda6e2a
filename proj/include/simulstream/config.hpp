#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace simulstream {

// Model architecture knobs. Defaults are the full-size configuration;
// tests shrink enc_layers (and friends) to desk scale.
struct ModelConfig {
    uint32_t enc_layers = 16;
    uint32_t enc_dim = 256;
    uint32_t enc_heads = 8;
    uint32_t enc_left_context = 65; // attention window incl. current frame
    uint32_t conv_kernel = 32;
    uint32_t dec_layers = 6;
    uint32_t dec_dim = 768;
    uint32_t k = 150;      // wait-k window, in encoder frames
    uint32_t out_mels = 128;
    uint32_t mel_bins = 80;
    uint32_t rate_in = 16000;
    uint32_t rate_out = 24000;

    uint32_t head_dim() const { return enc_dim / enc_heads; }

    void validate() const; // throws ConfigError

    static ModelConfig from_json(const std::string& text);
    static ModelConfig from_json_file(const std::filesystem::path& path);
    std::string to_json() const;
    void to_json_file(const std::filesystem::path& path) const;
};

// Mel frontend parameters. 25 ms windows / 10 ms hop at 16 kHz.
struct FrontendConfig {
    uint32_t sample_rate = 16000;
    uint32_t n_fft = 512;
    uint32_t win_length = 400;
    uint32_t hop_length = 160;
    uint32_t n_mels = 80;
    double f_min = 125.0;
    double f_max = 7600.0;
    double floor_epsilon = 1e-5;

    static FrontendConfig from_model(const ModelConfig& m) {
        FrontendConfig f;
        f.sample_rate = m.rate_in;
        f.n_mels = m.mel_bins;
        return f;
    }
};

inline constexpr uint32_t kPacketSamples = 320;   // 20 ms at 16 kHz
inline constexpr uint32_t kPacketMs = 20;         // packet / encoder frame duration
inline constexpr uint32_t kEncFrameMs = 20;
inline constexpr uint32_t kDecFrameMs = 25;
inline constexpr uint32_t kOutSamplesPerFrame = 600; // 25 ms at 24 kHz
inline constexpr uint32_t kPreNetDim = 256;
inline constexpr uint32_t kPostNetChannels = 256;
inline constexpr uint32_t kPostNetKernel = 5;
inline constexpr uint32_t kPostNetLayers = 5;
inline constexpr uint32_t kVocoderBaseChannels = 256;
inline constexpr uint32_t kVocoderUpsample[4] = {5, 5, 4, 6}; // product 600
inline constexpr uint32_t kVocoderResKernel = 3;
inline constexpr uint32_t kVocoderOutKernel = 7;
inline constexpr float kLeakySlope = 0.2f;
inline constexpr float kLayerNormEps = 1e-6f;

} // namespace simulstream
