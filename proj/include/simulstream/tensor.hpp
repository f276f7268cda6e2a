#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace simulstream {

enum class DType : uint8_t { F32 = 0, I8 = 1 };

// A named dense tensor, row-major. Weights are either 32-bit float or
// int8 with positive per-output-channel scales (symmetric, zero point 0):
// dequantized[r][c] = i8[r][c] * scale(r). A single scale entry means
// per-tensor quantization.
struct Tensor {
    std::string name;
    DType dtype = DType::F32;
    std::vector<uint32_t> dims;
    std::vector<float> f32;
    std::vector<int8_t> i8;
    std::vector<float> scales;

    size_t numel() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
    size_t rows() const { return dims.empty() ? 0 : dims[0]; }
    size_t row_size() const { return dims.empty() ? 0 : numel() / dims[0]; }
    bool quantized() const { return dtype == DType::I8; }
    float scale_for_row(size_t r) const {
        return scales.size() == 1 ? scales[0] : scales[r];
    }
    // Serialized payload bytes (excluding name/dims/scales framing).
    size_t payload_bytes() const {
        return numel() * (dtype == DType::F32 ? 4 : 1);
    }
};

Tensor make_f32(std::string name, std::vector<uint32_t> dims);

// One weight row in either storage form, so conv/matvec loops can stay
// dtype-agnostic. For I8 rows the dot products accumulate the raw int8
// values in float and apply the channel scale once at the end.
struct WeightRow {
    const float* f32 = nullptr;
    const int8_t* i8 = nullptr;
    float scale = 1.0f;
    size_t n = 0;
};

WeightRow weight_row(const Tensor& t, size_t row);

float dot(const WeightRow& w, const float* x);

// y = W x (+ bias). W is [rows x cols]; bias, when given, is float and
// has `rows` entries. I8 weights route through qmatvec (dynamic-range
// activation quantization, int32 accumulation).
void matvec(const Tensor& w, const float* x, float* y, const Tensor* bias = nullptr);

// (x - mean) / sqrt(var + eps) * gamma + beta, biased variance.
void layer_norm(std::span<const float> x, std::span<float> out,
                std::span<const float> gamma, std::span<const float> beta, float eps);

// Max-subtracted in-place softmax; entries end non-negative, sum 1.
void softmax_inplace(std::span<float> v);

inline float relu(float v) { return v > 0.0f ? v : 0.0f; }
inline float leaky_relu(float v, float slope) { return v > 0.0f ? v : slope * v; }
inline float sigmoidf(float v) { return 1.0f / (1.0f + std::exp(-v)); }

bool all_finite(std::span<const float> v);

} // namespace simulstream
