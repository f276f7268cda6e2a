#include "simulstream/decoder.hpp"

#include <cmath>
#include <cstring>

#include "simulstream/common.hpp"

namespace simulstream {

double initial_delay_ms(const DecoderConfig& cfg) {
    return double(cfg.k) * cfg.enc_frame_ms;
}

SchedulerAction schedule(uint64_t frames_received, uint64_t steps_emitted, uint32_t k,
                         bool source_done, bool stop_seen, uint64_t flush_steps,
                         uint64_t max_flush_steps, uint64_t max_total_steps) {
    if (!source_done) {
        if (frames_received < k) return SchedulerAction::Read;
        // 20 ms in per 25 ms out: duration matching keeps output length
        // proportional to input length beyond the wait-k delay.
        const uint64_t pace = (frames_received - k + 1) * kEncFrameMs / kDecFrameMs;
        return steps_emitted < pace ? SchedulerAction::Write : SchedulerAction::Read;
    }
    if (frames_received == 0) return SchedulerAction::Finish;
    if (stop_seen || flush_steps >= max_flush_steps || steps_emitted >= max_total_steps)
        return SchedulerAction::Finish;
    return SchedulerAction::Write;
}

AttendResult waitk_attend(std::span<const float> query,
                          std::span<const EncoderFrame> window, const Tensor& wq,
                          const Tensor& wk, const Tensor& wv) {
    if (window.empty()) throw ScheduleError("wait-k attention over an empty window");
    const size_t d = wq.rows();
    std::vector<float> q(d);
    matvec(wq, query.data(), q.data());
    const float inv_sqrt = 1.0f / std::sqrt(float(d));

    AttendResult res;
    res.weights.resize(window.size());
    std::vector<float> key(d);
    for (size_t j = 0; j < window.size(); ++j) {
        matvec(wk, window[j].features.data(), key.data());
        float s = 0.0f;
        for (size_t e = 0; e < d; ++e) s += q[e] * key[e];
        res.weights[j] = s * inv_sqrt;
    }
    softmax_inplace(res.weights);
    res.context.assign(d, 0.0f);
    std::vector<float> value(d);
    for (size_t j = 0; j < window.size(); ++j) {
        matvec(wv, window[j].features.data(), value.data());
        for (size_t e = 0; e < d; ++e) res.context[e] += res.weights[j] * value[e];
    }
    return res;
}

namespace {

const Tensor* need(const ModelWeights& w, const std::string& name,
                   std::vector<uint32_t> dims) {
    const Tensor& t = w.at(name);
    if (t.dims != dims)
        throw FormatError("tensor " + name + " has unexpected shape");
    return &t;
}

} // namespace

DecoderWeights bind_decoder(const ModelWeights& w, const ModelConfig& cfg) {
    DecoderWeights dw;
    const uint32_t d = cfg.enc_dim, h = cfg.dec_dim;
    dw.prenet0_w = need(w, "dec.prenet.l0.w", {kPreNetDim, cfg.out_mels});
    dw.prenet0_b = need(w, "dec.prenet.l0.b", {kPreNetDim});
    dw.prenet1_w = need(w, "dec.prenet.l1.w", {kPreNetDim, kPreNetDim});
    dw.prenet1_b = need(w, "dec.prenet.l1.b", {kPreNetDim});
    dw.attn_wq = need(w, "dec.attn.q.w", {d, h});
    dw.attn_wk = need(w, "dec.attn.k.w", {d, d});
    dw.attn_wv = need(w, "dec.attn.v.w", {d, d});
    dw.lstm.resize(cfg.dec_layers);
    for (uint32_t i = 0; i < cfg.dec_layers; ++i) {
        const std::string p = "dec.lstm" + std::to_string(i) + ".";
        const uint32_t in = (i == 0 ? kPreNetDim : h) + d;
        dw.lstm[i].w_ih = need(w, p + "w_ih", {4 * h, in});
        dw.lstm[i].w_hh = need(w, p + "w_hh", {4 * h, h});
        dw.lstm[i].b = need(w, p + "b", {4 * h});
    }
    dw.mel_w = need(w, "dec.mel.w", {cfg.out_mels, h});
    dw.mel_b = need(w, "dec.mel.b", {cfg.out_mels});
    dw.stop_w = need(w, "dec.stop.w", {1, h});
    dw.stop_b = need(w, "dec.stop.b", {1});
    dw.postnet.resize(kPostNetLayers);
    uint32_t in_ch = cfg.out_mels;
    for (uint32_t i = 0; i < kPostNetLayers; ++i) {
        const uint32_t out_ch = (i + 1 == kPostNetLayers) ? cfg.out_mels : kPostNetChannels;
        const std::string p = "dec.postnet.c" + std::to_string(i) + ".";
        dw.postnet[i].w = need(w, p + "w", {out_ch, in_ch, kPostNetKernel});
        dw.postnet[i].b = need(w, p + "b", {out_ch});
        in_ch = out_ch;
    }
    return dw;
}

Decoder::Decoder(const ModelConfig& cfg, const ModelWeights& weights)
    : cfg_(DecoderConfig::from_model(cfg)), enc_dim_(cfg.enc_dim),
      w_(bind_decoder(weights, cfg)) {
    reset();
}

void Decoder::reset() {
    window_.clear();
    lstm_h_.assign(cfg_.lstm_layers, std::vector<float>(cfg_.lstm_dim, 0.0f));
    lstm_c_.assign(cfg_.lstm_layers, std::vector<float>(cfg_.lstm_dim, 0.0f));
    prev_frame_.assign(cfg_.out_mels, 0.0f); // go-frame
    post_cache_.clear();
    uint32_t in_ch = cfg_.out_mels;
    for (uint32_t i = 0; i < kPostNetLayers; ++i) {
        post_cache_.emplace_back(size_t(kPostNetKernel - 1) * in_ch, 0.0f);
        in_ch = (i + 1 == kPostNetLayers) ? cfg_.out_mels : kPostNetChannels;
    }
    frames_received_ = 0;
    steps_emitted_ = 0;
}

void Decoder::read_frame(const EncoderFrame& frame) {
    WindowEntry e;
    e.frame = frame;
    e.key.resize(enc_dim_);
    e.value.resize(enc_dim_);
    matvec(*w_.attn_wk, frame.features.data(), e.key.data());
    matvec(*w_.attn_wv, frame.features.data(), e.value.data());
    window_.push_back(std::move(e));
    if (window_.size() > cfg_.k) window_.pop_front();
    ++frames_received_;
}

DecoderFrame Decoder::step() {
    if (window_.empty())
        throw ScheduleError("decoder step before any encoder frame arrived");

    const uint32_t d = enc_dim_;
    const uint32_t h = cfg_.lstm_dim;

    // attention context, computed once per step; query is the top LSTM
    // layer's hidden state from the previous step (zeros at start)
    std::vector<float> q(d);
    matvec(*w_.attn_wq, lstm_h_.back().data(), q.data());
    const float inv_sqrt = 1.0f / std::sqrt(float(d));
    std::vector<float> logits(window_.size());
    for (size_t j = 0; j < window_.size(); ++j) {
        float s = 0.0f;
        const float* kj = window_[j].key.data();
        for (uint32_t e = 0; e < d; ++e) s += q[e] * kj[e];
        logits[j] = s * inv_sqrt;
    }
    softmax_inplace(logits);
    std::vector<float> context(d, 0.0f);
    for (size_t j = 0; j < window_.size(); ++j) {
        const float p = logits[j];
        const float* vj = window_[j].value.data();
        for (uint32_t e = 0; e < d; ++e) context[e] += p * vj[e];
    }

    // prenet on the previous output frame
    std::vector<float> p0(kPreNetDim), p1(kPreNetDim);
    matvec(*w_.prenet0_w, prev_frame_.data(), p0.data(), w_.prenet0_b);
    for (float& v : p0) v = relu(v);
    matvec(*w_.prenet1_w, p0.data(), p1.data(), w_.prenet1_b);
    for (float& v : p1) v = relu(v);

    // LSTM stack; every layer sees [lower output, context]
    std::vector<float> input;
    std::vector<float> gates(4 * h), gates_hh(4 * h);
    const float* lower = p1.data();
    size_t lower_n = kPreNetDim;
    for (uint32_t l = 0; l < cfg_.lstm_layers; ++l) {
        input.resize(lower_n + d);
        std::memcpy(input.data(), lower, lower_n * sizeof(float));
        std::memcpy(input.data() + lower_n, context.data(), d * sizeof(float));
        matvec(*w_.lstm[l].w_ih, input.data(), gates.data(), w_.lstm[l].b);
        matvec(*w_.lstm[l].w_hh, lstm_h_[l].data(), gates_hh.data());
        std::vector<float>& hs = lstm_h_[l];
        std::vector<float>& cs = lstm_c_[l];
        for (uint32_t e = 0; e < h; ++e) {
            const float gi = sigmoidf(gates[e] + gates_hh[e]);
            const float gf = sigmoidf(gates[h + e] + gates_hh[h + e]);
            const float gg = std::tanh(gates[2 * h + e] + gates_hh[2 * h + e]);
            const float go = sigmoidf(gates[3 * h + e] + gates_hh[3 * h + e]);
            cs[e] = gf * cs[e] + gi * gg;
            hs[e] = go * std::tanh(cs[e]);
        }
        lower = hs.data();
        lower_n = h;
    }

    DecoderFrame frame;
    frame.step = steps_emitted_;
    frame.mel.resize(cfg_.out_mels);
    matvec(*w_.mel_w, lstm_h_.back().data(), frame.mel.data(), w_.mel_b);
    float stop_logit = 0.0f;
    matvec(*w_.stop_w, lstm_h_.back().data(), &stop_logit, w_.stop_b);
    frame.stop_prob = sigmoidf(stop_logit);

    prev_frame_ = frame.mel; // pre-postnet, per the autoregressive contract
    ++steps_emitted_;
    return frame;
}

std::vector<float> Decoder::postnet_apply(std::span<const float> mel) {
    std::vector<float> cur(mel.begin(), mel.end());
    uint32_t in_ch = cfg_.out_mels;
    for (uint32_t l = 0; l < kPostNetLayers; ++l) {
        const Tensor& wt = *w_.postnet[l].w;
        const Tensor& bt = *w_.postnet[l].b;
        const uint32_t out_ch = wt.dims[0];
        std::vector<float>& hist = post_cache_[l]; // [kernel-1][in_ch], oldest first
        std::vector<float> next(out_ch);
        for (uint32_t o = 0; o < out_ch; ++o) {
            const WeightRow row = weight_row(wt, o); // [in_ch][kernel] flattened
            float acc = 0.0f;
            for (uint32_t c = 0; c < in_ch; ++c) {
                const size_t base = size_t(c) * kPostNetKernel;
                for (uint32_t tap = 0; tap + 1 < kPostNetKernel; ++tap) {
                    const float in = hist[size_t(tap) * in_ch + c];
                    acc += (row.f32 ? row.f32[base + tap] : float(row.i8[base + tap])) * in;
                }
                acc += (row.f32 ? row.f32[base + kPostNetKernel - 1]
                                : float(row.i8[base + kPostNetKernel - 1])) *
                       cur[c];
            }
            if (row.i8) acc *= row.scale;
            next[o] = acc + bt.f32[o];
        }
        // shift history and append the layer input
        std::memmove(hist.data(), hist.data() + in_ch,
                     size_t(kPostNetKernel - 2) * in_ch * sizeof(float));
        std::memcpy(hist.data() + size_t(kPostNetKernel - 2) * in_ch, cur.data(),
                    in_ch * sizeof(float));
        if (l + 1 < kPostNetLayers)
            for (float& v : next) v = std::tanh(v);
        cur = std::move(next);
        in_ch = out_ch;
    }
    std::vector<float> out(mel.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = mel[i] + cur[i];
    return out;
}

std::vector<std::vector<float>> postnet_offline(std::span<const std::vector<float>> mels,
                                                const ModelConfig& cfg,
                                                const ModelWeights& weights) {
    const DecoderWeights dw = bind_decoder(weights, cfg);
    const size_t T = mels.size();
    std::vector<std::vector<float>> cur(mels.begin(), mels.end());
    uint32_t in_ch = cfg.out_mels;
    for (uint32_t l = 0; l < kPostNetLayers; ++l) {
        const Tensor& wt = *dw.postnet[l].w;
        const Tensor& bt = *dw.postnet[l].b;
        const uint32_t out_ch = wt.dims[0];
        std::vector<std::vector<float>> next(T, std::vector<float>(out_ch));
        for (size_t t = 0; t < T; ++t) {
            for (uint32_t o = 0; o < out_ch; ++o) {
                const WeightRow row = weight_row(wt, o);
                float acc = 0.0f;
                for (uint32_t c = 0; c < in_ch; ++c) {
                    const size_t base = size_t(c) * kPostNetKernel;
                    for (uint32_t tap = 0; tap < kPostNetKernel; ++tap) {
                        const ptrdiff_t src =
                            ptrdiff_t(t) - ptrdiff_t(kPostNetKernel - 1) + tap;
                        const float in = src < 0 ? 0.0f : cur[size_t(src)][c];
                        acc += (row.f32 ? row.f32[base + tap] : float(row.i8[base + tap])) * in;
                    }
                }
                if (row.i8) acc *= row.scale;
                next[t][o] = acc + bt.f32[o];
            }
            if (l + 1 < kPostNetLayers)
                for (float& v : next[t]) v = std::tanh(v);
        }
        cur = std::move(next);
        in_ch = out_ch;
    }
    std::vector<std::vector<float>> out(T);
    for (size_t t = 0; t < T; ++t) {
        out[t].resize(mels[t].size());
        for (size_t i = 0; i < out[t].size(); ++i) out[t][i] = mels[t][i] + cur[t][i];
    }
    return out;
}

} // namespace simulstream
