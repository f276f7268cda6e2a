#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "simulstream/config.hpp"

namespace simulstream {

// Fixed 20 ms block of 16-bit PCM at 16 kHz, the pipeline's input unit.
struct AudioPacket {
    std::array<int16_t, kPacketSamples> samples{};
};

struct MelFrame {
    std::vector<float> bins; // log-mel energies, floored at log(floor_epsilon)
    uint64_t index = 0;
    double timestamp_ms = 0.0; // frame start = index * 10
};

// Triangular filters on the mel scale mel(f) = 2595*log10(1 + f/700),
// n_mels rows over n_fft/2+1 magnitude bins. Rows are non-negative and
// each has at least one positive entry (checked at build time).
struct MelFilterbank {
    uint32_t n_mels = 0;
    uint32_t n_bins = 0;
    std::vector<float> weights;     // [n_mels][n_bins]
    std::vector<double> centers_hz; // filter peak frequencies

    const float* row(size_t m) const { return weights.data() + m * n_bins; }
};

MelFilterbank build_mel_filterbank(uint32_t sample_rate, uint32_t n_fft,
                                   uint32_t n_mels, double f_min, double f_max);

// Streaming log-mel extractor: 400-sample Hann windows every 160 samples,
// power spectrum through the filterbank, log with an energy floor. Input
// PCM is normalized by 1/32768. Carries up to window-1 samples between
// pushes so incremental and one-shot processing are bit-identical.
class Frontend {
  public:
    explicit Frontend(const FrontendConfig& cfg);

    // Any number of samples; emits every complete window.
    std::vector<MelFrame> push(std::span<const int16_t> samples);
    // Exactly one 320-sample packet (2 hops; steady state emits 2 frames).
    std::vector<MelFrame> push_samples(const AudioPacket& packet);

    void reset();

    uint64_t frames_emitted() const { return frames_emitted_; }
    const MelFilterbank& filterbank() const { return filterbank_; }
    const FrontendConfig& config() const { return cfg_; }

  private:
    FrontendConfig cfg_;
    MelFilterbank filterbank_;
    std::vector<double> window_; // Hann, win_length points
    std::vector<float> pending_; // normalized carry, < win_length after emit
    uint64_t frames_emitted_ = 0;

    MelFrame compute_frame(const float* samples);
};

} // namespace simulstream
