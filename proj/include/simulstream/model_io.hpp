#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "simulstream/config.hpp"
#include "simulstream/tensor.hpp"

namespace simulstream {

// The full set of named tensors for one model. Tensor order is fixed by
// model_tensor_specs(), which makes serialization deterministic.
struct ModelWeights {
    std::vector<Tensor> tensors;
    std::map<std::string, size_t, std::less<>> index;

    bool has(std::string_view name) const { return index.count(name) > 0; }
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    void rebuild_index();
    bool any_quantized() const;
};

struct TensorSpec {
    std::string name;
    std::vector<uint32_t> dims;
};

// Every tensor the architecture needs, in serialization order.
std::vector<TensorSpec> model_tensor_specs(const ModelConfig& cfg);

// Deterministic seeded init: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
// for weights, zeros for biases, ones for norm scales. Uses only integer
// RNG output and IEEE basic ops, so files hash identically across
// platforms for a given seed.
ModelWeights init_random(const ModelConfig& cfg, uint64_t seed);

// "SMWT" container: magic, version u16, tensor count u32, then per
// tensor: name (u16 length + UTF-8), dtype u8, rank u8, dims u32 each,
// scale count u32 + f32 scales, raw little-endian payload.
void save_weights(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

// Exact serialized size, computable before writing.
uint64_t file_bytes(const ModelWeights& w);
uint64_t predicted_file_bytes(const ModelConfig& cfg, DType weight_dtype);

inline constexpr uint16_t kWeightFileVersion = 1;
inline constexpr char kWeightFileMagic[4] = {'S', 'M', 'W', 'T'};

} // namespace simulstream
