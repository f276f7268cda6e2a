#include "simulstream/encoder.hpp"

#include <cmath>
#include <cstring>

#include "simulstream/common.hpp"

namespace simulstream {

namespace {

const Tensor* need(const ModelWeights& w, const std::string& name,
                   std::vector<uint32_t> dims) {
    const Tensor& t = w.at(name);
    if (t.dims != dims) {
        std::string want, got;
        for (uint32_t d : dims) want += std::to_string(d) + " ";
        for (uint32_t d : t.dims) got += std::to_string(d) + " ";
        throw FormatError("tensor " + name + " has shape [ " + got + "], expected [ " +
                          want + "]");
    }
    return &t;
}

} // namespace

EncoderWeights bind_encoder(const ModelWeights& w, const ModelConfig& cfg) {
    const uint32_t d = cfg.enc_dim;
    EncoderWeights e;
    e.subsample_w = need(w, "enc.subsample.w", {d, 2 * cfg.mel_bins});
    e.subsample_b = need(w, "enc.subsample.b", {d});
    e.blocks.resize(cfg.enc_layers);
    for (uint32_t i = 0; i < cfg.enc_layers; ++i) {
        const std::string p = "enc.b" + std::to_string(i) + ".";
        ConformerBlockWeights& b = e.blocks[i];
        b.proj_in_w = need(w, p + "proj_in.w", {d, d});
        b.proj_in_b = need(w, p + "proj_in.b", {d});
        b.wq = need(w, p + "attn.q.w", {d, d});
        b.bq = need(w, p + "attn.q.b", {d});
        b.wk = need(w, p + "attn.k.w", {d, d});
        b.bk = need(w, p + "attn.k.b", {d});
        b.wv = need(w, p + "attn.v.w", {d, d});
        b.bv = need(w, p + "attn.v.b", {d});
        b.wo = need(w, p + "attn.out.w", {d, d});
        b.bo = need(w, p + "attn.out.b", {d});
        b.conv_pre_w = need(w, p + "conv.pre.w", {d, d});
        b.conv_pre_b = need(w, p + "conv.pre.b", {d});
        b.dw_w = need(w, p + "conv.dw.w", {d, cfg.conv_kernel});
        b.dw_b = need(w, p + "conv.dw.b", {d});
        b.conv_post_w = need(w, p + "conv.post.w", {d, d});
        b.conv_post_b = need(w, p + "conv.post.b", {d});
        b.proj_out_w = need(w, p + "proj_out.w", {d, d});
        b.proj_out_b = need(w, p + "proj_out.b", {d});
        b.ln_g = need(w, p + "ln.g", {d});
        b.ln_b = need(w, p + "ln.b", {d});
    }
    return e;
}

Encoder::Encoder(const ModelConfig& cfg, const ModelWeights& weights)
    : cfg_(cfg), w_(bind_encoder(weights, cfg)) {
    caches_.resize(cfg.enc_layers);
    for (BlockCache& c : caches_) {
        c.k.reserve(size_t(cfg.enc_left_context) * cfg.enc_dim);
        c.v.reserve(size_t(cfg.enc_left_context) * cfg.enc_dim);
        c.conv.assign(size_t(cfg.conv_kernel - 1) * cfg.enc_dim, 0.0f);
    }
}

void Encoder::reset() {
    for (BlockCache& c : caches_) {
        c.k.clear();
        c.v.clear();
        c.len = 0;
        std::fill(c.conv.begin(), c.conv.end(), 0.0f);
    }
    pending_.reset();
    frames_in_ = 0;
    frames_out_ = 0;
}

std::vector<float> Encoder::subsample(const MelFrame& a, const MelFrame& b) const {
    if (b.index != a.index + 1 || a.index % 2 != 0)
        throw SequenceError("subsample needs consecutive frames (even, odd), got " +
                            std::to_string(a.index) + ", " + std::to_string(b.index));
    std::vector<float> cat(2 * cfg_.mel_bins);
    std::memcpy(cat.data(), a.bins.data(), cfg_.mel_bins * sizeof(float));
    std::memcpy(cat.data() + cfg_.mel_bins, b.bins.data(), cfg_.mel_bins * sizeof(float));
    std::vector<float> out(cfg_.enc_dim);
    matvec(*w_.subsample_w, cat.data(), out.data(), w_.subsample_b);
    for (float& v : out) v = relu(v);
    return out;
}

std::vector<float> Encoder::block_step(size_t block, BlockCache& cache,
                                       std::span<const float> x) const {
    const uint32_t d = cfg_.enc_dim;
    const uint32_t heads = cfg_.enc_heads;
    const uint32_t hd = cfg_.head_dim();
    const uint32_t ctx = cfg_.enc_left_context;
    const ConformerBlockWeights& bw = w_.blocks[block];

    if (!all_finite(x))
        throw NumericError("non-finite input to conformer block " + std::to_string(block));

    // in-projection, residual
    std::vector<float> y1(d), tmp(d);
    matvec(*bw.proj_in_w, x.data(), tmp.data(), bw.proj_in_b);
    for (uint32_t i = 0; i < d; ++i) y1[i] = x[i] + tmp[i];

    // causal self-attention over the last <= ctx frames incl. this one
    std::vector<float> q(d), k(d), v(d);
    matvec(*bw.wq, y1.data(), q.data(), bw.bq);
    matvec(*bw.wk, y1.data(), k.data(), bw.bk);
    matvec(*bw.wv, y1.data(), v.data(), bw.bv);
    if (cache.len == ctx) { // evict oldest
        std::memmove(cache.k.data(), cache.k.data() + d, (ctx - 1) * d * sizeof(float));
        std::memmove(cache.v.data(), cache.v.data() + d, (ctx - 1) * d * sizeof(float));
        cache.len = ctx - 1;
        cache.k.resize(cache.len * d);
        cache.v.resize(cache.len * d);
    }
    cache.k.insert(cache.k.end(), k.begin(), k.end());
    cache.v.insert(cache.v.end(), v.begin(), v.end());
    ++cache.len;

    const float inv_sqrt = 1.0f / std::sqrt(float(hd));
    std::vector<float> context(d, 0.0f);
    std::vector<float> logits(cache.len);
    for (uint32_t h = 0; h < heads; ++h) {
        const uint32_t off = h * hd;
        for (size_t j = 0; j < cache.len; ++j) {
            const float* kj = cache.k.data() + j * d + off;
            float s = 0.0f;
            for (uint32_t e = 0; e < hd; ++e) s += q[off + e] * kj[e];
            logits[j] = s * inv_sqrt;
        }
        softmax_inplace(logits);
        for (size_t j = 0; j < cache.len; ++j) {
            const float* vj = cache.v.data() + j * d + off;
            const float p = logits[j];
            for (uint32_t e = 0; e < hd; ++e) context[off + e] += p * vj[e];
        }
    }
    std::vector<float> y2(d);
    matvec(*bw.wo, context.data(), tmp.data(), bw.bo);
    for (uint32_t i = 0; i < d; ++i) y2[i] = y1[i] + tmp[i];

    // depthwise conv with pointwise pre/post projections
    const uint32_t kernel = cfg_.conv_kernel;
    std::vector<float> u(d);
    matvec(*bw.conv_pre_w, y2.data(), u.data(), bw.conv_pre_b);
    std::vector<float> conv(d);
    for (uint32_t c = 0; c < d; ++c) {
        const WeightRow kr = weight_row(*bw.dw_w, c);
        float acc = 0.0f;
        if (kr.f32) {
            for (uint32_t t = 0; t + 1 < kernel; ++t)
                acc += kr.f32[t] * cache.conv[size_t(t) * d + c];
            acc += kr.f32[kernel - 1] * u[c];
        } else {
            for (uint32_t t = 0; t + 1 < kernel; ++t)
                acc += float(kr.i8[t]) * cache.conv[size_t(t) * d + c];
            acc += float(kr.i8[kernel - 1]) * u[c];
            acc *= kr.scale;
        }
        conv[c] = acc + bw.dw_b->f32[c];
    }
    // shift left one frame, append u
    std::memmove(cache.conv.data(), cache.conv.data() + d,
                 (kernel - 2) * size_t(d) * sizeof(float));
    std::memcpy(cache.conv.data() + (kernel - 2) * size_t(d), u.data(), d * sizeof(float));
    std::vector<float> y3(d);
    matvec(*bw.conv_post_w, conv.data(), tmp.data(), bw.conv_post_b);
    for (uint32_t i = 0; i < d; ++i) y3[i] = y2[i] + tmp[i];

    // out-projection, then layer norm without residual
    matvec(*bw.proj_out_w, y3.data(), tmp.data(), bw.proj_out_b);
    std::vector<float> y4(d);
    for (uint32_t i = 0; i < d; ++i) y4[i] = y3[i] + tmp[i];
    std::vector<float> out(d);
    layer_norm(y4, out, std::span<const float>(bw.ln_g->f32),
               std::span<const float>(bw.ln_b->f32), kLayerNormEps);
    return out;
}

std::optional<EncoderFrame> Encoder::encode_step(const MelFrame& mel) {
    if (mel.index != frames_in_)
        throw SequenceError("mel frame " + std::to_string(mel.index) +
                            " out of order, expected " + std::to_string(frames_in_));
    ++frames_in_;
    if (!pending_) {
        pending_ = mel;
        return std::nullopt;
    }
    std::vector<float> x = subsample(*pending_, mel);
    pending_.reset();
    for (size_t b = 0; b < caches_.size(); ++b) x = block_step(b, caches_[b], x);
    EncoderFrame frame;
    frame.features = std::move(x);
    frame.index = frames_out_++;
    return frame;
}

std::vector<EncoderFrame> encode_offline(std::span<const MelFrame> mels,
                                         const ModelConfig& cfg,
                                         const ModelWeights& weights) {
    if (mels.size() % 2 != 0)
        throw SequenceError("offline encoding needs an even number of mel frames");
    const EncoderWeights ew = bind_encoder(weights, cfg);
    const uint32_t d = cfg.enc_dim;
    const uint32_t heads = cfg.enc_heads;
    const uint32_t hd = cfg.head_dim();
    const uint32_t ctx = cfg.enc_left_context;
    const uint32_t kernel = cfg.conv_kernel;
    const size_t T = mels.size() / 2;

    // subsample pairs
    std::vector<std::vector<float>> x(T);
    for (size_t t = 0; t < T; ++t) {
        std::vector<float> cat(2 * cfg.mel_bins);
        std::memcpy(cat.data(), mels[2 * t].bins.data(), cfg.mel_bins * sizeof(float));
        std::memcpy(cat.data() + cfg.mel_bins, mels[2 * t + 1].bins.data(),
                    cfg.mel_bins * sizeof(float));
        x[t].resize(d);
        matvec(*ew.subsample_w, cat.data(), x[t].data(), ew.subsample_b);
        for (float& v : x[t]) v = relu(v);
    }

    std::vector<std::vector<float>> y1(T), y2(T);
    std::vector<float> tmp(d);
    for (const ConformerBlockWeights& bw : ew.blocks) {
        // in-projection
        for (size_t t = 0; t < T; ++t) {
            matvec(*bw.proj_in_w, x[t].data(), tmp.data(), bw.proj_in_b);
            y1[t].resize(d);
            for (uint32_t i = 0; i < d; ++i) y1[t][i] = x[t][i] + tmp[i];
        }
        // attention with an explicit causal band mask of width ctx
        std::vector<std::vector<float>> K(T), V(T), Q(T);
        for (size_t t = 0; t < T; ++t) {
            Q[t].resize(d);
            K[t].resize(d);
            V[t].resize(d);
            matvec(*bw.wq, y1[t].data(), Q[t].data(), bw.bq);
            matvec(*bw.wk, y1[t].data(), K[t].data(), bw.bk);
            matvec(*bw.wv, y1[t].data(), V[t].data(), bw.bv);
        }
        const float inv_sqrt = 1.0f / std::sqrt(float(hd));
        for (size_t t = 0; t < T; ++t) {
            const size_t lo = t + 1 >= ctx ? t + 1 - ctx : 0;
            std::vector<float> context(d, 0.0f);
            std::vector<float> logits(t - lo + 1);
            for (uint32_t h = 0; h < heads; ++h) {
                const uint32_t off = h * hd;
                for (size_t j = lo; j <= t; ++j) {
                    float s = 0.0f;
                    for (uint32_t e = 0; e < hd; ++e) s += Q[t][off + e] * K[j][off + e];
                    logits[j - lo] = s * inv_sqrt;
                }
                softmax_inplace(logits);
                for (size_t j = lo; j <= t; ++j) {
                    const float p = logits[j - lo];
                    for (uint32_t e = 0; e < hd; ++e) context[off + e] += p * V[j][off + e];
                }
            }
            matvec(*bw.wo, context.data(), tmp.data(), bw.bo);
            y2[t].resize(d);
            for (uint32_t i = 0; i < d; ++i) y2[t][i] = y1[t][i] + tmp[i];
        }
        // depthwise conv, zero left padding
        std::vector<std::vector<float>> u(T);
        for (size_t t = 0; t < T; ++t) {
            u[t].resize(d);
            matvec(*bw.conv_pre_w, y2[t].data(), u[t].data(), bw.conv_pre_b);
        }
        for (size_t t = 0; t < T; ++t) {
            std::vector<float> conv(d);
            for (uint32_t c = 0; c < d; ++c) {
                const WeightRow kr = weight_row(*bw.dw_w, c);
                float acc = 0.0f;
                for (uint32_t tap = 0; tap < kernel; ++tap) {
                    const ptrdiff_t src = ptrdiff_t(t) - ptrdiff_t(kernel - 1) + tap;
                    const float in = src < 0 ? 0.0f : u[size_t(src)][c];
                    acc += (kr.f32 ? kr.f32[tap] : float(kr.i8[tap])) * in;
                }
                if (kr.i8) acc *= kr.scale;
                conv[c] = acc + bw.dw_b->f32[c];
            }
            matvec(*bw.conv_post_w, conv.data(), tmp.data(), bw.conv_post_b);
            for (uint32_t i = 0; i < d; ++i) x[t][i] = y2[t][i] + tmp[i]; // x reused as y3
        }
        // out-projection + layer norm
        for (size_t t = 0; t < T; ++t) {
            matvec(*bw.proj_out_w, x[t].data(), tmp.data(), bw.proj_out_b);
            std::vector<float> y4(d);
            for (uint32_t i = 0; i < d; ++i) y4[i] = x[t][i] + tmp[i];
            layer_norm(y4, x[t], std::span<const float>(bw.ln_g->f32),
                       std::span<const float>(bw.ln_b->f32), kLayerNormEps);
        }
    }

    std::vector<EncoderFrame> out(T);
    for (size_t t = 0; t < T; ++t) {
        out[t].features = std::move(x[t]);
        out[t].index = t;
    }
    return out;
}

} // namespace simulstream
