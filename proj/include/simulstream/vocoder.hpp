#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "simulstream/config.hpp"
#include "simulstream/model_io.hpp"

namespace simulstream {

struct VocoderWeights {
    const Tensor *in_w, *in_b; // 1x1 conv, mel -> base channels
    struct Stage {
        const Tensor *up_w, *up_b; // transposed conv [out_ch][in_ch][2*factor]
        struct Res {
            const Tensor *c0_w, *c0_b; // causal k3 conv
            const Tensor *c1_w, *c1_b; // 1x1 conv
        };
        Res res[2];
    };
    Stage stages[4];
    const Tensor *out_w, *out_b; // causal k7 conv to 1 channel
};

VocoderWeights bind_vocoder(const ModelWeights& w, const ModelConfig& cfg);

// Streaming MelGAN-style generator made causal: 1x1 input conv, four
// causal transposed-conv upsampling stages (factors 5,5,4,6 -> 600
// samples per 25 ms frame, channels halving from 256), two residual
// conv blocks per stage (kernel 3, leaky ReLU 0.2), final causal conv
// to one channel + tanh. Transposed convs emit only samples fully
// determined by current-and-past inputs; the overlap lives in state.
class Vocoder {
  public:
    Vocoder(const ModelConfig& cfg, const ModelWeights& weights);

    // One 128-dim mel frame in, exactly 600 samples out.
    std::vector<float> vocode_step(std::span<const float> mel);

    void reset();
    uint64_t samples_emitted() const { return samples_emitted_; }

    // Stage-0 residual conv cache, exposed for fault injection.
    std::vector<float>& res_cache(size_t stage, size_t block) {
        return stages_[stage].res[block].c0_hist;
    }

  private:
    ModelConfig cfg_;
    VocoderWeights w_;

    struct ResState {
        std::vector<float> c0_hist; // [kernel-1][ch], oldest first
    };
    struct StageState {
        uint32_t factor = 0, in_ch = 0, out_ch = 0, kernel = 0;
        std::vector<float> pending; // [kernel][out_ch] partial sums
        ResState res[2];
    };
    StageState stages_[4];
    std::vector<float> out_hist_; // [out_kernel-1][ch] final conv history
    uint64_t samples_emitted_ = 0;

    std::vector<float> run_stage(size_t idx, std::span<const float> x, size_t t_in);
};

// Full-sequence oracle in gather form (direct transposed-conv definition
// per output position); matches the streaming path to float summation
// order. Returns 600 * mels.size() samples.
std::vector<float> vocode_offline(std::span<const std::vector<float>> mels,
                                  const ModelConfig& cfg,
                                  const ModelWeights& weights);

} // namespace simulstream
