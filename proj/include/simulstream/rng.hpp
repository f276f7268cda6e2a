#pragma once

#include <cstdint>
#include <random>

namespace simulstream {

// mt19937_64-backed uniform floats built from raw integer output only
// (std distributions are implementation-defined), so weight streams are
// bit-identical across platforms for a given seed.
class InitRng {
  public:
    explicit InitRng(uint64_t seed) : gen_(seed) {}

    // [0, 1), 24 mantissa bits
    float uniform01() { return float(gen_() >> 40) * 0x1p-24f; }

    // [-limit, limit)
    float symmetric(float limit) { return (2.0f * uniform01() - 1.0f) * limit; }

    uint64_t next_u64() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

} // namespace simulstream
