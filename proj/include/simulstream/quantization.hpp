#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "simulstream/model_io.hpp"
#include "simulstream/tensor.hpp"

namespace simulstream {

enum class QuantPolicy { PerChannel, PerTensor };

// Symmetric int8 for one float vector: scale = max|x| / 127 (1 if the
// vector is all zeros), values rounded to nearest and clamped to ±127.
struct VectorQuant {
    std::vector<int8_t> q;
    float scale = 1.0f;
};
VectorQuant quantize_vector(std::span<const float> x);

// Per-channel (dim 0) or per-tensor symmetric quantization of a float
// tensor. All-zero channels get scale 1 and zero data.
Tensor quantize_tensor(const Tensor& t, QuantPolicy policy);
Tensor dequantize_tensor(const Tensor& t);

// Weight matrices and conv kernels (rank >= 2) are quantized; biases and
// normalization parameters (rank 1) stay float.
bool quantizable(const Tensor& t);
ModelWeights quantize_weights(const ModelWeights& w, QuantPolicy policy = QuantPolicy::PerChannel);

// y = dequant(W) x (+ bias), computed as int8 x int8 dot products
// accumulated in int32 and rescaled by scale_w(row) * scale_x. x is
// quantized per call (dynamic range).
void qmatvec(const Tensor& w, std::span<const float> x, std::span<float> y,
             const Tensor* bias = nullptr);

struct SizeReport {
    uint64_t file_bytes = 0;
    uint64_t est_peak_memory_bytes = 0;
};

// Exact serialized bytes plus an estimate of steady-state resident
// memory: weights + per-layer streaming caches + activation workspace.
SizeReport size_report(const ModelWeights& w, const ModelConfig& cfg);

// Fraction of serialized bytes occupied by quantizable tensor payloads.
double quantizable_payload_fraction(const ModelWeights& w);

} // namespace simulstream
