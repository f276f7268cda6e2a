#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "simulstream/config.hpp"
#include "simulstream/frontend.hpp"
#include "simulstream/model_io.hpp"

namespace simulstream {

// 256-dim encoded frame covering [index*20, index*20 + 20) ms.
struct EncoderFrame {
    std::vector<float> features;
    uint64_t index = 0;

    double covers_ms_begin() const { return double(index) * kEncFrameMs; }
    double covers_ms_end() const { return double(index + 1) * kEncFrameMs; }
};

// Resolved tensor views for one conformer block. Sub-layer order:
// in-projection, causal self-attention, depthwise conv (with pointwise
// pre/post projections), out-projection, final layer norm. Residual on
// everything except the layer norm.
struct ConformerBlockWeights {
    const Tensor *proj_in_w, *proj_in_b;
    const Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    const Tensor *conv_pre_w, *conv_pre_b;
    const Tensor *dw_w, *dw_b; // [dim][kernel] per-channel kernels
    const Tensor *conv_post_w, *conv_post_b;
    const Tensor *proj_out_w, *proj_out_b;
    const Tensor *ln_g, *ln_b;
};

struct EncoderWeights {
    const Tensor *subsample_w, *subsample_b; // [dim][2*mel_bins]
    std::vector<ConformerBlockWeights> blocks;
};

// Validates presence and shapes of every encoder tensor.
EncoderWeights bind_encoder(const ModelWeights& w, const ModelConfig& cfg);

// Per-block streaming cache. k/v hold the most recent <= left_context
// frames *including* the one being processed (current KV is appended
// before attending, evicting the oldest past capacity). conv holds the
// previous kernel-1 pre-conv activations.
struct BlockCache {
    std::vector<float> k; // [len][dim]
    std::vector<float> v; // [len][dim]
    size_t len = 0;
    std::vector<float> conv; // [kernel-1][dim], oldest first
};

class Encoder {
  public:
    Encoder(const ModelConfig& cfg, const ModelWeights& weights);

    // Buffers unpaired frames; every second frame runs the full stack and
    // yields one EncoderFrame. Frame indices must arrive consecutively.
    std::optional<EncoderFrame> encode_step(const MelFrame& mel);

    void reset();

    // concat(a, b) -> dense(2*mel_bins -> dim) -> ReLU.
    std::vector<float> subsample(const MelFrame& a, const MelFrame& b) const;

    // One block on one frame against an explicit cache (test surface).
    std::vector<float> block_step(size_t block, BlockCache& cache,
                                  std::span<const float> x) const;

    BlockCache& cache(size_t block) { return caches_[block]; }
    uint64_t frames_out() const { return frames_out_; }

  private:
    ModelConfig cfg_;
    EncoderWeights w_;
    std::vector<BlockCache> caches_;
    std::optional<MelFrame> pending_;
    uint64_t frames_in_ = 0;
    uint64_t frames_out_ = 0;
};

// Full-sequence oracle: identical math expressed over whole sequences
// with an explicit causal band mask of width enc_left_context. Input
// length must be even.
std::vector<EncoderFrame> encode_offline(std::span<const MelFrame> mels,
                                         const ModelConfig& cfg,
                                         const ModelWeights& weights);

} // namespace simulstream
