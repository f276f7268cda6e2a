#include "simulstream/vocoder.hpp"

#include <cmath>
#include <cstring>

#include "simulstream/common.hpp"

namespace simulstream {

namespace {

const Tensor* need(const ModelWeights& w, const std::string& name,
                   std::vector<uint32_t> dims) {
    const Tensor& t = w.at(name);
    if (t.dims != dims)
        throw FormatError("tensor " + name + " has unexpected shape");
    return &t;
}

float tap_weight(const WeightRow& row, size_t idx) {
    return row.f32 ? row.f32[idx] : float(row.i8[idx]);
}

// One residual block position: y = x + c1(lrelu(c0(lrelu(x)))) where c0
// is a causal kernel-3 conv whose history holds the previous two
// lrelu'd inputs (oldest first).
void res_block_position(const Tensor& c0_w, const Tensor& c0_b, const Tensor& c1_w,
                        const Tensor& c1_b, std::vector<float>& hist, float* x,
                        uint32_t ch) {
    static thread_local std::vector<float> lr, c0_out, c1_out;
    lr.resize(ch);
    c0_out.resize(ch);
    c1_out.resize(ch);
    for (uint32_t c = 0; c < ch; ++c) lr[c] = leaky_relu(x[c], kLeakySlope);
    for (uint32_t o = 0; o < ch; ++o) {
        const WeightRow row = weight_row(c0_w, o); // [ch][3]
        float acc = 0.0f;
        for (uint32_t c = 0; c < ch; ++c) {
            const size_t base = size_t(c) * kVocoderResKernel;
            acc += tap_weight(row, base + 0) * hist[c];
            acc += tap_weight(row, base + 1) * hist[ch + c];
            acc += tap_weight(row, base + 2) * lr[c];
        }
        if (row.i8) acc *= row.scale;
        c0_out[o] = leaky_relu(acc + c0_b.f32[o], kLeakySlope);
    }
    // shift history, append current lrelu'd input
    std::memcpy(hist.data(), hist.data() + ch, ch * sizeof(float));
    std::memcpy(hist.data() + ch, lr.data(), ch * sizeof(float));
    matvec(c1_w, c0_out.data(), c1_out.data(), &c1_b);
    for (uint32_t c = 0; c < ch; ++c) x[c] += c1_out[c];
}

} // namespace

VocoderWeights bind_vocoder(const ModelWeights& w, const ModelConfig& cfg) {
    VocoderWeights vw;
    vw.in_w = need(w, "voc.in.w", {kVocoderBaseChannels, cfg.out_mels});
    vw.in_b = need(w, "voc.in.b", {kVocoderBaseChannels});
    uint32_t ch = kVocoderBaseChannels;
    for (uint32_t s = 0; s < 4; ++s) {
        const uint32_t out_ch = ch / 2;
        const std::string p = "voc.up" + std::to_string(s) + ".";
        vw.stages[s].up_w = need(w, p + "w", {out_ch, ch, 2 * kVocoderUpsample[s]});
        vw.stages[s].up_b = need(w, p + "b", {out_ch});
        for (uint32_t r = 0; r < 2; ++r) {
            const std::string rp = p + "res" + std::to_string(r) + ".";
            vw.stages[s].res[r].c0_w = need(w, rp + "c0.w", {out_ch, out_ch, kVocoderResKernel});
            vw.stages[s].res[r].c0_b = need(w, rp + "c0.b", {out_ch});
            vw.stages[s].res[r].c1_w = need(w, rp + "c1.w", {out_ch, out_ch});
            vw.stages[s].res[r].c1_b = need(w, rp + "c1.b", {out_ch});
        }
        ch = out_ch;
    }
    vw.out_w = need(w, "voc.out.w", {1, ch, kVocoderOutKernel});
    vw.out_b = need(w, "voc.out.b", {1});
    return vw;
}

Vocoder::Vocoder(const ModelConfig& cfg, const ModelWeights& weights)
    : cfg_(cfg), w_(bind_vocoder(weights, cfg)) {
    uint32_t ch = kVocoderBaseChannels;
    for (uint32_t s = 0; s < 4; ++s) {
        StageState& st = stages_[s];
        st.factor = kVocoderUpsample[s];
        st.in_ch = ch;
        st.out_ch = ch / 2;
        st.kernel = 2 * st.factor;
        st.pending.assign(size_t(st.kernel) * st.out_ch, 0.0f);
        for (ResState& r : st.res)
            r.c0_hist.assign(size_t(kVocoderResKernel - 1) * st.out_ch, 0.0f);
        ch = st.out_ch;
    }
    out_hist_.assign(size_t(kVocoderOutKernel - 1) * ch, 0.0f);
}

void Vocoder::reset() {
    for (StageState& st : stages_) {
        std::fill(st.pending.begin(), st.pending.end(), 0.0f);
        for (ResState& r : st.res)
            std::fill(r.c0_hist.begin(), r.c0_hist.end(), 0.0f);
    }
    std::fill(out_hist_.begin(), out_hist_.end(), 0.0f);
    samples_emitted_ = 0;
}

std::vector<float> Vocoder::run_stage(size_t idx, std::span<const float> x, size_t t_in) {
    StageState& st = stages_[idx];
    const VocoderWeights::Stage& sw = w_.stages[idx];
    const uint32_t f = st.factor, K = st.kernel, ic = st.in_ch, oc = st.out_ch;
    std::vector<float> out(t_in * f * oc);

    for (size_t t = 0; t < t_in; ++t) {
        // scatter this input's contributions over the next K positions;
        // pending is laid out [out_ch][K] so the tap loop is contiguous
        const float* xt = x.data() + t * ic;
        for (uint32_t o = 0; o < oc; ++o) {
            const WeightRow row = weight_row(*sw.up_w, o); // [ic][K]
            float* pend = st.pending.data() + size_t(o) * K;
            if (row.f32) {
                for (uint32_t c = 0; c < ic; ++c) {
                    const float xv = xt[c];
                    const float* wt = row.f32 + size_t(c) * K;
                    for (uint32_t j = 0; j < K; ++j) pend[j] += wt[j] * xv;
                }
            } else {
                static thread_local std::vector<float> acc;
                acc.assign(K, 0.0f);
                for (uint32_t c = 0; c < ic; ++c) {
                    const float xv = xt[c];
                    const int8_t* wt = row.i8 + size_t(c) * K;
                    for (uint32_t j = 0; j < K; ++j) acc[j] += float(wt[j]) * xv;
                }
                for (uint32_t j = 0; j < K; ++j) pend[j] += acc[j] * row.scale;
            }
        }
        // positions t*f .. t*f+f-1 are now fully determined: emit them
        float* dst = out.data() + t * f * oc;
        const float* bias = sw.up_b->f32.data();
        for (uint32_t o = 0; o < oc; ++o) {
            const float* pend = st.pending.data() + size_t(o) * K;
            for (uint32_t j = 0; j < f; ++j) dst[size_t(j) * oc + o] = pend[j] + bias[o];
        }
        // slide each channel's overlap window
        for (uint32_t o = 0; o < oc; ++o) {
            float* pend = st.pending.data() + size_t(o) * K;
            std::memmove(pend, pend + f, size_t(K - f) * sizeof(float));
            std::fill(pend + (K - f), pend + K, 0.0f);
        }
    }

    for (size_t p = 0; p < t_in * f; ++p) {
        float* pos = out.data() + p * oc;
        res_block_position(*sw.res[0].c0_w, *sw.res[0].c0_b, *sw.res[0].c1_w,
                           *sw.res[0].c1_b, st.res[0].c0_hist, pos, oc);
        res_block_position(*sw.res[1].c0_w, *sw.res[1].c0_b, *sw.res[1].c1_w,
                           *sw.res[1].c1_b, st.res[1].c0_hist, pos, oc);
    }
    return out;
}

std::vector<float> Vocoder::vocode_step(std::span<const float> mel) {
    if (mel.size() != cfg_.out_mels)
        throw FormatError("vocoder expects " + std::to_string(cfg_.out_mels) + " mel bins");
    if (!all_finite(mel)) throw NumericError("non-finite input to vocoder");

    std::vector<float> x(kVocoderBaseChannels);
    matvec(*w_.in_w, mel.data(), x.data(), w_.in_b);
    size_t t = 1;
    for (size_t s = 0; s < 4; ++s) {
        x = run_stage(s, x, t);
        t *= stages_[s].factor;
    }

    // final causal conv to one channel, tanh
    const uint32_t ch = stages_[3].out_ch;
    const WeightRow row = weight_row(*w_.out_w, 0); // [ch][7]
    const float bias = w_.out_b->f32[0];
    std::vector<float> samples(t);
    for (size_t p = 0; p < t; ++p) {
        const float* cur = x.data() + p * ch;
        float acc = 0.0f;
        for (uint32_t c = 0; c < ch; ++c) {
            const size_t base = size_t(c) * kVocoderOutKernel;
            for (uint32_t tap = 0; tap + 1 < kVocoderOutKernel; ++tap)
                acc += tap_weight(row, base + tap) * out_hist_[size_t(tap) * ch + c];
            acc += tap_weight(row, base + kVocoderOutKernel - 1) * cur[c];
        }
        if (row.i8) acc *= row.scale;
        samples[p] = std::tanh(acc + bias);
        std::memmove(out_hist_.data(), out_hist_.data() + ch,
                     size_t(kVocoderOutKernel - 2) * ch * sizeof(float));
        std::memcpy(out_hist_.data() + size_t(kVocoderOutKernel - 2) * ch, cur,
                    ch * sizeof(float));
    }
    samples_emitted_ += samples.size();
    return samples;
}

std::vector<float> vocode_offline(std::span<const std::vector<float>> mels,
                                  const ModelConfig& cfg, const ModelWeights& weights) {
    const VocoderWeights vw = bind_vocoder(weights, cfg);
    const size_t T = mels.size();
    if (T == 0) return {};

    // input 1x1 conv
    std::vector<float> x(T * kVocoderBaseChannels);
    for (size_t t = 0; t < T; ++t)
        matvec(*vw.in_w, mels[t].data(), x.data() + t * kVocoderBaseChannels, vw.in_b);

    size_t t_len = T;
    uint32_t ic = kVocoderBaseChannels;
    for (uint32_t s = 0; s < 4; ++s) {
        const uint32_t f = kVocoderUpsample[s];
        const uint32_t K = 2 * f;
        const uint32_t oc = ic / 2;
        const size_t out_len = t_len * f;
        std::vector<float> up(out_len * oc);
        // gather form: for each output position, walk the kernel taps
        // (descending input index), trimmed to causal emissions only
        for (size_t p = 0; p < out_len; ++p) {
            for (uint32_t o = 0; o < oc; ++o) {
                const WeightRow row = weight_row(*vw.stages[s].up_w, o);
                float acc = 0.0f;
                for (uint32_t j = 0; j < K; ++j) {
                    if (p < j || (p - j) % f != 0) continue;
                    const size_t t = (p - j) / f;
                    if (t >= t_len) continue;
                    const float* xt = x.data() + t * ic;
                    for (uint32_t c = 0; c < ic; ++c)
                        acc += tap_weight(row, size_t(c) * K + j) * xt[c];
                }
                if (row.i8) acc *= row.scale;
                up[p * oc + o] = acc + vw.stages[s].up_b->f32[o];
            }
        }
        // residual blocks, zero left padding
        for (uint32_t r = 0; r < 2; ++r) {
            const auto& rw = vw.stages[s].res[r];
            std::vector<float> lr(out_len * oc);
            for (size_t i = 0; i < up.size(); ++i) lr[i] = leaky_relu(up[i], kLeakySlope);
            std::vector<float> delta(oc);
            std::vector<float> c0(oc);
            for (size_t p = 0; p < out_len; ++p) {
                for (uint32_t o = 0; o < oc; ++o) {
                    const WeightRow row = weight_row(*rw.c0_w, o);
                    float acc = 0.0f;
                    for (uint32_t c = 0; c < oc; ++c) {
                        const size_t base = size_t(c) * kVocoderResKernel;
                        for (uint32_t tap = 0; tap < kVocoderResKernel; ++tap) {
                            const ptrdiff_t src =
                                ptrdiff_t(p) - ptrdiff_t(kVocoderResKernel - 1) + tap;
                            if (src < 0) continue;
                            acc += tap_weight(row, base + tap) * lr[size_t(src) * oc + c];
                        }
                    }
                    if (row.i8) acc *= row.scale;
                    c0[o] = leaky_relu(acc + rw.c0_b->f32[o], kLeakySlope);
                }
                matvec(*rw.c1_w, c0.data(), delta.data(), rw.c1_b);
                for (uint32_t o = 0; o < oc; ++o) up[p * oc + o] += delta[o];
            }
        }
        x = std::move(up);
        ic = oc;
        t_len = out_len;
    }

    std::vector<float> wave(t_len);
    const WeightRow row = weight_row(*vw.out_w, 0);
    const float bias = vw.out_b->f32[0];
    for (size_t p = 0; p < t_len; ++p) {
        float acc = 0.0f;
        for (uint32_t c = 0; c < ic; ++c) {
            const size_t base = size_t(c) * kVocoderOutKernel;
            for (uint32_t tap = 0; tap < kVocoderOutKernel; ++tap) {
                const ptrdiff_t src = ptrdiff_t(p) - ptrdiff_t(kVocoderOutKernel - 1) + tap;
                if (src < 0) continue;
                acc += tap_weight(row, base + tap) * x[size_t(src) * ic + c];
            }
        }
        if (row.i8) acc *= row.scale;
        wave[p] = std::tanh(acc + bias);
    }
    return wave;
}

} // namespace simulstream
