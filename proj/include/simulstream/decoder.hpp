#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "simulstream/config.hpp"
#include "simulstream/encoder.hpp"
#include "simulstream/model_io.hpp"

namespace simulstream {

struct DecoderConfig {
    uint32_t k = 150;
    uint32_t lstm_layers = 6;
    uint32_t lstm_dim = 768;
    uint32_t out_mels = 128;
    uint32_t dec_frame_ms = kDecFrameMs;
    uint32_t enc_frame_ms = kEncFrameMs;
    uint64_t max_flush_steps = 100; // trailing WRITEs after source end
    uint64_t max_total_factor = 4;  // hard cap = factor * encoder frames

    static DecoderConfig from_model(const ModelConfig& m) {
        DecoderConfig d;
        d.k = m.k;
        d.lstm_layers = m.dec_layers;
        d.lstm_dim = m.dec_dim;
        d.out_mels = m.out_mels;
        return d;
    }
};

// k * 20 ms: the fixed context-accumulation delay before the first WRITE.
double initial_delay_ms(const DecoderConfig& cfg);

struct DecoderFrame {
    std::vector<float> mel; // pre-postnet spectrogram frame
    uint64_t step = 0;
    float stop_prob = 0.0f;
};

enum class SchedulerAction { Read, Write, Finish };

// Read/write policy. Warm-up: READ until k frames arrived. Streaming:
// WRITE while steps_emitted < floor((frames_received - k + 1) * 20 / 25),
// else READ (output duration tracks input duration minus the delay).
// After source_done: WRITE (window frozen) until a stop_prob > 0.5 has
// been seen or a flush/total cap is hit, then FINISH.
SchedulerAction schedule(uint64_t frames_received, uint64_t steps_emitted,
                         uint32_t k, bool source_done, bool stop_seen = false,
                         uint64_t flush_steps = 0,
                         uint64_t max_flush_steps = ~0ull,
                         uint64_t max_total_steps = ~0ull);

struct AttendResult {
    std::vector<float> context; // enc_dim
    std::vector<float> weights; // one per window entry, sums to 1
};

// Single-head dot-product attention over the wait-k window: logits =
// (Wq q)·(Wk frame)/sqrt(d), softmax over exactly the window entries,
// context = sum softmax * (Wv frame). Throws ScheduleError on an empty
// window.
AttendResult waitk_attend(std::span<const float> query,
                          std::span<const EncoderFrame> window,
                          const Tensor& wq, const Tensor& wk, const Tensor& wv);

struct DecoderWeights {
    const Tensor *prenet0_w, *prenet0_b, *prenet1_w, *prenet1_b;
    const Tensor *attn_wq, *attn_wk, *attn_wv;
    struct Lstm {
        const Tensor *w_ih, *w_hh, *b; // gate order i, f, g, o
    };
    std::vector<Lstm> lstm;
    const Tensor *mel_w, *mel_b;
    const Tensor *stop_w, *stop_b;
    struct PostConv {
        const Tensor *w, *b; // [out_ch][in_ch][kernel]
    };
    std::vector<PostConv> postnet;
};

DecoderWeights bind_decoder(const ModelWeights& w, const ModelConfig& cfg);

// Autoregressive spectrogram decoder. The driver (pipeline) owns the
// schedule loop: read_frame() on READ, step() + postnet_apply() on WRITE.
class Decoder {
  public:
    Decoder(const ModelConfig& cfg, const ModelWeights& weights);

    // Push one encoder frame into the sliding window (evicts past k).
    void read_frame(const EncoderFrame& frame);

    // One WRITE: prenet(prev mel) -> attention context (query = top LSTM
    // hidden from the previous step) -> LSTM stack with the context
    // concatenated at every layer -> mel head + stop logit.
    DecoderFrame step();

    // 5-layer causal conv refinement, residual: out = mel + convs(mel).
    // Advances the postnet left-context cache by one frame.
    std::vector<float> postnet_apply(std::span<const float> mel);

    void reset();

    uint64_t frames_received() const { return frames_received_; }
    uint64_t steps_emitted() const { return steps_emitted_; }
    size_t window_size() const { return window_.size(); }
    const DecoderConfig& config() const { return cfg_; }

    // Postnet caches, exposed for fault-injection in verification.
    std::vector<std::vector<float>>& postnet_cache() { return post_cache_; }

  private:
    DecoderConfig cfg_;
    uint32_t enc_dim_;
    DecoderWeights w_;

    struct WindowEntry {
        EncoderFrame frame;
        std::vector<float> key, value; // cached Wk/Wv projections
    };
    std::deque<WindowEntry> window_;
    std::vector<std::vector<float>> lstm_h_, lstm_c_;
    std::vector<float> prev_frame_;
    std::vector<std::vector<float>> post_cache_; // per layer [kernel-1][in_ch]
    uint64_t frames_received_ = 0;
    uint64_t steps_emitted_ = 0;
};

// Offline causal-conv oracle for the postnet, zero left padding.
std::vector<std::vector<float>> postnet_offline(
    std::span<const std::vector<float>> mels, const ModelConfig& cfg,
    const ModelWeights& weights);

} // namespace simulstream
