#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "simulstream/common.hpp"
#include "simulstream/quantization.hpp"
#include "test_util.hpp"

using namespace simulstream;
namespace tu = testutil;

namespace {

Tensor random_matrix(InitRng& rng, uint32_t rows, uint32_t cols, float limit = 1.0f) {
    Tensor t = make_f32("t", {rows, cols});
    for (float& v : t.f32) v = rng.symmetric(limit);
    return t;
}

} // namespace

TEST_CASE("roundtrip error stays within half a scale step per channel") {
    InitRng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const uint32_t rows = 1 + uint32_t(rng.next_u64() % 32);
        const uint32_t cols = 1 + uint32_t(rng.next_u64() % 64);
        const Tensor t = random_matrix(rng, rows, cols, 0.5f + rng.uniform01() * 4.0f);
        const Tensor q = quantize_tensor(t, QuantPolicy::PerChannel);
        REQUIRE(q.scales.size() == rows);
        for (uint32_t r = 0; r < rows; ++r) {
            const double scale = q.scales[r];
            CHECK(scale > 0.0);
            for (uint32_t c = 0; c < cols; ++c) {
                const double deq = double(q.i8[size_t(r) * cols + c]) * scale;
                CHECK(std::fabs(deq - double(t.f32[size_t(r) * cols + c])) <= scale / 2.0);
            }
        }
    }
}

TEST_CASE("all-zero tensors quantize to zeros with scale one") {
    Tensor t = make_f32("z", {4, 8});
    const Tensor q = quantize_tensor(t, QuantPolicy::PerChannel);
    for (float s : q.scales) CHECK(s == 1.0f);
    for (int8_t v : q.i8) CHECK(v == 0);
    const Tensor pt = quantize_tensor(t, QuantPolicy::PerTensor);
    REQUIRE(pt.scales.size() == 1);
    CHECK(pt.scales[0] == 1.0f);
}

TEST_CASE("per-tensor policy uses a single scale") {
    InitRng rng(103);
    const Tensor t = random_matrix(rng, 8, 16);
    const Tensor q = quantize_tensor(t, QuantPolicy::PerTensor);
    REQUIRE(q.scales.size() == 1);
    const double scale = q.scales[0];
    for (size_t i = 0; i < t.f32.size(); ++i)
        CHECK(std::fabs(double(q.i8[i]) * scale - double(t.f32[i])) <= scale / 2.0);
}

TEST_CASE("qmatvec: near-identity weight reproduces the input") {
    Tensor w = make_f32("id", {32, 32});
    for (uint32_t i = 0; i < 32; ++i) w.f32[size_t(i) * 32 + i] = 1.0f;
    const Tensor q = quantize_tensor(w, QuantPolicy::PerChannel);
    InitRng rng(105);
    const std::vector<float> x = tu::random_vec(rng, 32, 2.0f);
    std::vector<float> y(32);
    qmatvec(q, x, y);
    float xmax = 0.0f;
    for (float v : x) xmax = std::max(xmax, std::fabs(v));
    const float scale_x = xmax / 127.0f;
    // identity rows have scale 1/127; error bound is dominated by the
    // on-the-fly activation quantization
    for (uint32_t i = 0; i < 32; ++i)
        CHECK(std::fabs(y[i] - x[i]) <= 0.5f * scale_x + 0.5f / 127.0f * xmax + 1e-4f);
}

TEST_CASE("qmatvec error satisfies the analytic bound") {
    InitRng rng(107);
    for (int trial = 0; trial < 20; ++trial) {
        const uint32_t n = 64;
        const Tensor w = random_matrix(rng, n, n, 0.5f + rng.uniform01());
        const Tensor q = quantize_tensor(w, QuantPolicy::PerChannel);
        const std::vector<float> x = tu::random_vec(rng, n, 1.0f + rng.uniform01() * 3.0f);

        std::vector<float> yq(n);
        qmatvec(q, x, yq);

        float xmax = 0.0f;
        for (float v : x) xmax = std::max(xmax, std::fabs(v));
        const double scale_x = xmax == 0.0f ? 1.0 : double(xmax) / 127.0;

        for (uint32_t r = 0; r < n; ++r) {
            double yf = 0.0, wmax = 0.0;
            for (uint32_t c = 0; c < n; ++c) {
                yf += double(w.f32[size_t(r) * n + c]) * double(x[c]);
                wmax = std::max(wmax, std::fabs(double(w.f32[size_t(r) * n + c])));
            }
            const double sw = q.scales[r];
            const double bound =
                double(n) * (sw / 2.0 * xmax + scale_x / 2.0 * wmax + sw * scale_x / 4.0);
            CHECK(std::fabs(double(yq[r]) - yf) <= bound);
        }
    }
}

TEST_CASE("qmatvec maps zero input to exactly zero") {
    InitRng rng(109);
    const Tensor w = random_matrix(rng, 16, 24);
    const Tensor q = quantize_tensor(w, QuantPolicy::PerChannel);
    const std::vector<float> x(24, 0.0f);
    std::vector<float> y(16, 1.0f);
    qmatvec(q, x, y);
    for (float v : y) CHECK(v == 0.0f);
}

TEST_CASE("qmatvec rejects shape mismatches and float tensors") {
    InitRng rng(111);
    const Tensor w = random_matrix(rng, 4, 6);
    const Tensor q = quantize_tensor(w, QuantPolicy::PerChannel);
    std::vector<float> x(5, 0.0f), y(4);
    CHECK_THROWS_AS(qmatvec(q, x, y), FormatError);
    std::vector<float> x6(6, 0.0f);
    CHECK_THROWS_AS(qmatvec(w, x6, y), FormatError);
}

TEST_CASE("quantize_weights converts matrices and keeps rank-1 tensors float") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 113);
    const ModelWeights q = quantize_weights(w);
    REQUIRE(q.tensors.size() == w.tensors.size());
    for (const Tensor& t : q.tensors) {
        if (t.dims.size() >= 2) {
            CHECK(t.dtype == DType::I8);
            CHECK(t.scales.size() == t.dims[0]);
        } else {
            CHECK(t.dtype == DType::F32);
        }
    }
    CHECK_THROWS_AS(quantize_weights(q), FormatError); // already int8
}

TEST_CASE("file size ratio lands in the paper's 3x-4x band") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 115);
    CHECK(quantizable_payload_fraction(w) >= 0.9);
    const ModelWeights q = quantize_weights(w);
    const double ratio = double(file_bytes(w)) / double(file_bytes(q));
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 4.0);
}

TEST_CASE("size report matches serialized bytes and scales with dtype") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 117);
    const SizeReport f = size_report(w, cfg);
    CHECK(f.file_bytes == file_bytes(w));
    CHECK(f.est_peak_memory_bytes > f.file_bytes); // caches + workspace on top
    const ModelWeights q = quantize_weights(w);
    const SizeReport i = size_report(q, cfg);
    CHECK(i.file_bytes < f.file_bytes);
    CHECK(i.est_peak_memory_bytes < f.est_peak_memory_bytes);
}

TEST_CASE("matvec dispatches int8 weights through qmatvec") {
    InitRng rng(119);
    const Tensor w = random_matrix(rng, 12, 20);
    const Tensor q = quantize_tensor(w, QuantPolicy::PerChannel);
    const std::vector<float> x = tu::random_vec(rng, 20);
    std::vector<float> direct(12), dispatched(12);
    qmatvec(q, x, direct);
    matvec(q, x.data(), dispatched.data());
    CHECK(tu::bit_equal(direct, dispatched));
}
