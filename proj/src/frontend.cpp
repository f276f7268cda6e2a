#include "simulstream/frontend.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>

#include "simulstream/common.hpp"

namespace simulstream {

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Iterative radix-2 complex FFT, double precision. n must be a power of
// two; twiddles are recomputed per call (512-point transforms are cheap
// next to everything downstream).
void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / double(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

} // namespace

MelFilterbank build_mel_filterbank(uint32_t sample_rate, uint32_t n_fft,
                                   uint32_t n_mels, double f_min, double f_max) {
    if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
        throw ConfigError("mel range must satisfy 0 <= f_min < f_max <= nyquist");
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0)
        throw ConfigError("n_fft must be a power of two");

    MelFilterbank fb;
    fb.n_mels = n_mels;
    fb.n_bins = n_fft / 2 + 1;
    fb.weights.assign(size_t(n_mels) * fb.n_bins, 0.0f);
    fb.centers_hz.resize(n_mels);

    // n_mels + 2 points uniform on the mel axis: edges plus centers.
    const double mel_lo = hz_to_mel(f_min);
    const double mel_hi = hz_to_mel(f_max);
    std::vector<double> hz(n_mels + 2);
    for (uint32_t i = 0; i < n_mels + 2; ++i)
        hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(n_mels + 1));

    const double hz_per_bin = double(sample_rate) / double(n_fft);
    for (uint32_t m = 0; m < n_mels; ++m) {
        const double left = hz[m], center = hz[m + 1], right = hz[m + 2];
        fb.centers_hz[m] = center;
        bool any = false;
        for (uint32_t b = 0; b < fb.n_bins; ++b) {
            const double f = b * hz_per_bin;
            double w = 0.0;
            if (f > left && f < center) {
                w = (f - left) / (center - left);
            } else if (f >= center && f < right) {
                w = (right - f) / (right - center);
            }
            if (w > 0.0) any = true;
            fb.weights[size_t(m) * fb.n_bins + b] = float(w);
        }
        if (!any)
            throw ConfigError("mel filter " + std::to_string(m) +
                              " covers no FFT bin; reduce n_mels or widen the range");
    }
    return fb;
}

Frontend::Frontend(const FrontendConfig& cfg)
    : cfg_(cfg),
      filterbank_(build_mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels,
                                       cfg.f_min, cfg.f_max)) {
    if (cfg.hop_length == 0 || cfg.hop_length > cfg.win_length ||
        cfg.win_length > cfg.n_fft)
        throw ConfigError("need hop <= window <= n_fft");
    window_.resize(cfg.win_length);
    for (uint32_t i = 0; i < cfg.win_length; ++i)
        window_[i] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(cfg.win_length));
    pending_.reserve(cfg.win_length + kPacketSamples);
}

void Frontend::reset() {
    pending_.clear();
    frames_emitted_ = 0;
}

MelFrame Frontend::compute_frame(const float* samples) {
    std::vector<std::complex<double>> buf(cfg_.n_fft, {0.0, 0.0});
    for (uint32_t i = 0; i < cfg_.win_length; ++i)
        buf[i] = double(samples[i]) * window_[i];
    fft_radix2(buf);

    MelFrame frame;
    frame.index = frames_emitted_;
    frame.timestamp_ms = double(frame.index) * 1000.0 * cfg_.hop_length / cfg_.sample_rate;
    frame.bins.resize(cfg_.n_mels);
    const uint32_t n_bins = filterbank_.n_bins;
    std::vector<double> power(n_bins);
    for (uint32_t b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
    for (uint32_t m = 0; m < cfg_.n_mels; ++m) {
        const float* row = filterbank_.row(m);
        double acc = 0.0;
        for (uint32_t b = 0; b < n_bins; ++b) acc += double(row[b]) * power[b];
        frame.bins[m] = float(std::log(std::max(acc, cfg_.floor_epsilon)));
    }
    return frame;
}

std::vector<MelFrame> Frontend::push(std::span<const int16_t> samples) {
    for (int16_t s : samples) pending_.push_back(float(s) / 32768.0f);
    std::vector<MelFrame> out;
    size_t pos = 0;
    while (pending_.size() - pos >= cfg_.win_length) {
        out.push_back(compute_frame(pending_.data() + pos));
        ++frames_emitted_;
        pos += cfg_.hop_length;
    }
    if (pos > 0) pending_.erase(pending_.begin(), pending_.begin() + std::ptrdiff_t(pos));
    return out;
}

std::vector<MelFrame> Frontend::push_samples(const AudioPacket& packet) {
    return push(std::span<const int16_t>(packet.samples.data(), packet.samples.size()));
}

} // namespace simulstream
