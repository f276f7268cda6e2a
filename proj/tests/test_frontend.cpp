#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "simulstream/common.hpp"
#include "simulstream/frontend.hpp"
#include "test_util.hpp"

using namespace simulstream;
namespace tu = testutil;

namespace {

// Closed-form mel grid, recomputed independently of the implementation.
std::vector<double> oracle_centers(uint32_t n_mels, double f_min, double f_max) {
    auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double lo = mel(f_min), hi = mel(f_max);
    std::vector<double> centers(n_mels);
    for (uint32_t i = 0; i < n_mels; ++i)
        centers[i] = imel(lo + (hi - lo) * double(i + 1) / double(n_mels + 1));
    return centers;
}

// Naive DFT power spectrum of a Hann-windowed buffer, double precision.
std::vector<double> oracle_power(const std::vector<double>& samples, uint32_t n_fft) {
    std::vector<double> power(n_fft / 2 + 1);
    for (uint32_t b = 0; b < power.size(); ++b) {
        std::complex<double> acc(0.0, 0.0);
        for (uint32_t i = 0; i < samples.size(); ++i) {
            const double ang = -2.0 * std::numbers::pi * b * i / n_fft;
            acc += samples[i] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        power[b] = std::norm(acc);
    }
    return power;
}

AudioPacket packet_from(std::span<const int16_t> src, size_t index) {
    AudioPacket p{};
    std::copy_n(src.begin() + ptrdiff_t(index * kPacketSamples), kPacketSamples,
                p.samples.begin());
    return p;
}

} // namespace

TEST_CASE("filterbank shape and positivity") {
    const MelFilterbank fb = build_mel_filterbank(16000, 512, 80, 125.0, 7600.0);
    CHECK(fb.n_mels == 80);
    CHECK(fb.n_bins == 257);
    for (uint32_t m = 0; m < 80; ++m) {
        double sum = 0.0;
        for (uint32_t b = 0; b < fb.n_bins; ++b) {
            CHECK(fb.row(m)[b] >= 0.0f);
            sum += fb.row(m)[b];
        }
        CHECK(sum > 0.0);
    }
}

TEST_CASE("single filter covers the whole band") {
    const MelFilterbank fb = build_mel_filterbank(16000, 512, 1, 0.0, 8000.0);
    CHECK(fb.n_mels == 1);
    // every interior bin sits under the one triangle
    for (uint32_t b = 1; b + 1 < fb.n_bins; ++b) CHECK(fb.row(0)[b] > 0.0f);
}

TEST_CASE("filter centers match the closed-form mel grid") {
    const MelFilterbank fb = build_mel_filterbank(16000, 512, 80, 125.0, 7600.0);
    const std::vector<double> expect = oracle_centers(80, 125.0, 7600.0);
    for (uint32_t m = 0; m < 80; ++m)
        CHECK(std::fabs(fb.centers_hz[m] - expect[m]) / expect[m] <= 1e-6);
}

TEST_CASE("invalid frequency ranges are rejected") {
    CHECK_THROWS_AS(build_mel_filterbank(16000, 512, 80, 7600.0, 125.0), ConfigError);
    CHECK_THROWS_AS(build_mel_filterbank(16000, 512, 80, 0.0, 9000.0), ConfigError);
    CHECK_THROWS_AS(build_mel_filterbank(16000, 512, 0, 0.0, 8000.0), ConfigError);
}

TEST_CASE("steady state emits exactly two frames per packet") {
    Frontend fe(FrontendConfig{});
    InitRng rng(7);
    const std::vector<int16_t> pcm = tu::random_pcm(rng, 12 * kPacketSamples);
    CHECK(fe.push_samples(packet_from(pcm, 0)).size() == 0); // warm-up
    for (size_t p = 1; p < 12; ++p)
        CHECK(fe.push_samples(packet_from(pcm, p)).size() == 2);
}

TEST_CASE("zero input hits the energy floor in every bin") {
    FrontendConfig cfg;
    Frontend fe(cfg);
    const float floor_log = float(std::log(cfg.floor_epsilon));
    AudioPacket zero{};
    for (int i = 0; i < 4; ++i)
        for (const MelFrame& f : fe.push_samples(zero))
            for (float b : f.bins) CHECK(b == floor_log);
}

TEST_CASE("1 kHz sine peaks at the filter nearest 1 kHz") {
    FrontendConfig cfg;
    Frontend fe(cfg);
    std::vector<int16_t> pcm(6 * kPacketSamples);
    for (size_t i = 0; i < pcm.size(); ++i)
        pcm[i] = int16_t(std::lround(0.5 * 32767.0 *
                                     std::sin(2.0 * std::numbers::pi * 1000.0 * double(i) / 16000.0)));
    std::vector<MelFrame> frames = fe.push(pcm);
    REQUIRE(!frames.empty());

    // expected bin from the independently built filterbank: respond the
    // oracle triangles to a naive-DFT spectrum of the same window
    const std::vector<double> centers = oracle_centers(cfg.n_mels, cfg.f_min, cfg.f_max);
    size_t nearest = 0;
    for (size_t m = 1; m < centers.size(); ++m)
        if (std::fabs(centers[m] - 1000.0) < std::fabs(centers[nearest] - 1000.0))
            nearest = m;
    std::vector<double> windowed(cfg.n_fft, 0.0);
    for (uint32_t i = 0; i < cfg.win_length; ++i) {
        const double hann =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / cfg.win_length);
        windowed[i] = double(pcm[i]) / 32768.0 * hann;
    }
    const std::vector<double> power = oracle_power(windowed, cfg.n_fft);
    const MelFilterbank oracle_fb =
        build_mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max);
    size_t oracle_argmax = 0;
    double best = -1.0;
    for (uint32_t m = 0; m < cfg.n_mels; ++m) {
        double acc = 0.0;
        for (uint32_t b = 0; b < oracle_fb.n_bins; ++b)
            acc += double(oracle_fb.row(m)[b]) * power[b];
        if (acc > best) {
            best = acc;
            oracle_argmax = m;
        }
    }
    CHECK(oracle_argmax == nearest);

    for (const MelFrame& f : frames) {
        size_t argmax = 0;
        for (size_t b = 1; b < f.bins.size(); ++b)
            if (f.bins[b] > f.bins[argmax]) argmax = b;
        CHECK(argmax == nearest);
    }
}

TEST_CASE("reset returns the frontend to a fresh state") {
    FrontendConfig cfg;
    InitRng rng(13);
    const std::vector<int16_t> pcm = tu::random_pcm(rng, 100 * kPacketSamples);

    Frontend a(cfg);
    std::vector<MelFrame> first;
    for (size_t p = 0; p < 100; ++p)
        for (MelFrame& f : a.push_samples(packet_from(pcm, p))) first.push_back(std::move(f));
    a.reset();
    CHECK(a.frames_emitted() == 0);
    std::vector<MelFrame> second;
    for (size_t p = 0; p < 100; ++p)
        for (MelFrame& f : a.push_samples(packet_from(pcm, p))) second.push_back(std::move(f));

    REQUIRE(first.size() == second.size());
    for (size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].index == second[i].index);
        CHECK(tu::bit_equal(first[i].bins, second[i].bins));
    }
}

TEST_CASE("reset mid-stream matches a fresh instance") {
    FrontendConfig cfg;
    InitRng rng(17);
    const std::vector<int16_t> pcm = tu::random_pcm(rng, 10 * kPacketSamples);
    Frontend used(cfg);
    used.push(std::span(pcm).first(3 * kPacketSamples + 57)); // odd split
    used.reset();
    Frontend fresh(cfg);
    const std::vector<MelFrame> a = used.push(pcm);
    const std::vector<MelFrame> b = fresh.push(pcm);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(tu::bit_equal(a[i].bins, b[i].bins));
}

TEST_CASE("frame count follows floor((S-400)/160)+1") {
    FrontendConfig cfg;
    InitRng rng(19);
    for (const size_t total : {399u, 400u, 401u, 559u, 560u, 640u, 1280u, 5000u, 16000u}) {
        Frontend fe(cfg);
        const std::vector<int16_t> pcm = tu::random_pcm(rng, total);
        // feed in ragged chunks to exercise the carry buffer
        size_t pos = 0, emitted = 0;
        InitRng chunks(total);
        while (pos < total) {
            const size_t n = std::min(total - pos, size_t(1 + (chunks.next_u64() % 700)));
            emitted += fe.push(std::span(pcm).subspan(pos, n)).size();
            pos += n;
        }
        const size_t expect = total >= 400 ? (total - 400) / 160 + 1 : 0;
        CHECK(emitted == expect);
    }
}

TEST_CASE("incremental equals batch bit-for-bit") {
    FrontendConfig cfg;
    InitRng rng(23);
    const std::vector<int16_t> pcm = tu::random_pcm(rng, 25 * kPacketSamples);
    Frontend inc(cfg), batch(cfg);
    std::vector<MelFrame> a;
    for (size_t p = 0; p < 25; ++p)
        for (MelFrame& f : inc.push_samples(packet_from(pcm, p))) a.push_back(std::move(f));
    const std::vector<MelFrame> b = batch.push(pcm);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(tu::bit_equal(a[i].bins, b[i].bins));
}

TEST_CASE("causality: frames whose window ends before a change are unaffected") {
    FrontendConfig cfg;
    InitRng rng(29);
    const size_t total = 20 * kPacketSamples;
    std::vector<int16_t> x = tu::random_pcm(rng, total);
    for (const size_t t : {1000u, 2345u, 4800u}) {
        std::vector<int16_t> y = x;
        for (size_t i = t; i < total; ++i) y[i] = int16_t(rng.next_u64() & 0x7fff);
        Frontend fx(cfg), fy(cfg);
        const std::vector<MelFrame> a = fx.push(x);
        const std::vector<MelFrame> b = fy.push(y);
        // frame m covers samples [160m, 160m+400)
        for (size_t m = 0; m < std::min(a.size(), b.size()); ++m) {
            if (160 * m + 400 <= t) {
                CHECK(tu::bit_equal(a[m].bins, b[m].bins));
            }
        }
    }
}

TEST_CASE("mel frame metadata") {
    FrontendConfig cfg;
    InitRng rng(31);
    Frontend fe(cfg);
    const std::vector<int16_t> pcm = tu::random_pcm(rng, 8 * kPacketSamples);
    const std::vector<MelFrame> frames = fe.push(pcm);
    const float floor_log = float(std::log(cfg.floor_epsilon));
    for (size_t i = 0; i < frames.size(); ++i) {
        CHECK(frames[i].index == i);
        CHECK(frames[i].timestamp_ms == doctest::Approx(double(i) * 10.0));
        CHECK(frames[i].bins.size() == 80);
        for (float b : frames[i].bins) CHECK(b >= floor_log);
    }
}
