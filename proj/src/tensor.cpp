#include "simulstream/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "simulstream/common.hpp"
#include "simulstream/quantization.hpp"

namespace simulstream {

Tensor make_f32(std::string name, std::vector<uint32_t> dims) {
    Tensor t;
    t.name = std::move(name);
    t.dims = std::move(dims);
    t.f32.assign(t.numel(), 0.0f);
    return t;
}

WeightRow weight_row(const Tensor& t, size_t row) {
    WeightRow r;
    r.n = t.row_size();
    if (t.dtype == DType::F32) {
        r.f32 = t.f32.data() + row * r.n;
    } else {
        r.i8 = t.i8.data() + row * r.n;
        r.scale = t.scale_for_row(row);
    }
    return r;
}

namespace {

// Four independent accumulator lanes: the summation tree is fixed (so
// results stay deterministic) but the FP dependency chain is broken up
// enough for the CPU to pipeline.
float dot_f32(const float* w, const float* x, size_t n) {
    float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        a0 += w[j] * x[j];
        a1 += w[j + 1] * x[j + 1];
        a2 += w[j + 2] * x[j + 2];
        a3 += w[j + 3] * x[j + 3];
    }
    for (; j < n; ++j) a0 += w[j] * x[j];
    return (a0 + a1) + (a2 + a3);
}

float dot_i8f(const int8_t* w, const float* x, size_t n) {
    float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        a0 += float(w[j]) * x[j];
        a1 += float(w[j + 1]) * x[j + 1];
        a2 += float(w[j + 2]) * x[j + 2];
        a3 += float(w[j + 3]) * x[j + 3];
    }
    for (; j < n; ++j) a0 += float(w[j]) * x[j];
    return (a0 + a1) + (a2 + a3);
}

} // namespace

float dot(const WeightRow& w, const float* x) {
    if (w.f32) return dot_f32(w.f32, x, w.n);
    return dot_i8f(w.i8, x, w.n) * w.scale;
}


void matvec(const Tensor& w, const float* x, float* y, const Tensor* bias) {
    const size_t rows = w.rows();
    const size_t cols = w.row_size();
    if (w.dtype == DType::I8) {
        qmatvec(w, std::span<const float>(x, cols), std::span<float>(y, rows), bias);
        return;
    }
    const float* b = bias ? bias->f32.data() : nullptr;
    for (size_t r = 0; r < rows; ++r) {
        const float acc = dot_f32(w.f32.data() + r * cols, x, cols);
        y[r] = b ? acc + b[r] : acc;
    }
}

void layer_norm(std::span<const float> x, std::span<float> out,
                std::span<const float> gamma, std::span<const float> beta, float eps) {
    const size_t n = x.size();
    float mean = 0.0f;
    for (float v : x) mean += v;
    mean /= float(n);
    float var = 0.0f;
    for (float v : x) {
        const float d = v - mean;
        var += d * d;
    }
    var /= float(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (size_t i = 0; i < n; ++i)
        out[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
}

void softmax_inplace(std::span<float> v) {
    float mx = v[0];
    for (float e : v) mx = std::max(mx, e);
    float sum = 0.0f;
    for (float& e : v) {
        e = std::exp(e - mx);
        sum += e;
    }
    for (float& e : v) e /= sum;
}

bool all_finite(std::span<const float> v) {
    for (float e : v)
        if (!std::isfinite(e)) return false;
    return true;
}

} // namespace simulstream
