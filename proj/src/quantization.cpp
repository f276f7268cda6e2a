#include "simulstream/quantization.hpp"

#include <algorithm>
#include <cmath>

#if defined(__SSE2__) || defined(_M_X64)
#include <emmintrin.h>
#define SIMULSTREAM_SSE2 1
#endif

#include "simulstream/common.hpp"

namespace simulstream {

namespace {

// int8 x int8 dot, int32 accumulation. Integer math is exact, so the
// SIMD and scalar paths return identical values. Accumulators stay well
// below overflow: |products| <= 127^2 and rows are at most a few
// thousand entries.
int32_t dot_i8(const int8_t* w, const int8_t* x, size_t n) {
    size_t j = 0;
    int32_t s = 0;
#ifdef SIMULSTREAM_SSE2
    __m128i acc = _mm_setzero_si128();
    const __m128i zero = _mm_setzero_si128();
    for (; j + 16 <= n; j += 16) {
        const __m128i wv = _mm_loadu_si128(reinterpret_cast<const __m128i*>(w + j));
        const __m128i xv = _mm_loadu_si128(reinterpret_cast<const __m128i*>(x + j));
        // sign-extend bytes to int16 (unpack into the high byte, shift back)
        const __m128i wlo = _mm_srai_epi16(_mm_unpacklo_epi8(zero, wv), 8);
        const __m128i whi = _mm_srai_epi16(_mm_unpackhi_epi8(zero, wv), 8);
        const __m128i xlo = _mm_srai_epi16(_mm_unpacklo_epi8(zero, xv), 8);
        const __m128i xhi = _mm_srai_epi16(_mm_unpackhi_epi8(zero, xv), 8);
        acc = _mm_add_epi32(acc, _mm_madd_epi16(wlo, xlo));
        acc = _mm_add_epi32(acc, _mm_madd_epi16(whi, xhi));
    }
    alignas(16) int32_t lanes[4];
    _mm_store_si128(reinterpret_cast<__m128i*>(lanes), acc);
    s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
#endif
    for (; j < n; ++j) s += int32_t(w[j]) * int32_t(x[j]);
    return s;
}

// Double-precision division keeps the roundtrip error within scale/2
// even for values sitting near a rounding boundary.
int8_t quantize_exact(float v, float scale) {
    const double q = std::nearbyint(double(v) / double(scale));
    return int8_t(std::clamp(q, -127.0, 127.0));
}

// Fast path for per-call activation quantization inside qmatvec.
int8_t quantize_fast(float v, float inv_scale) {
    const float rounded = std::nearbyint(v * inv_scale);
    return int8_t(std::clamp(rounded, -127.0f, 127.0f));
}

float channel_scale(const float* v, size_t n) {
    float mx = 0.0f;
    for (size_t j = 0; j < n; ++j) mx = std::max(mx, std::fabs(v[j]));
    return mx == 0.0f ? 1.0f : mx / 127.0f;
}

} // namespace

VectorQuant quantize_vector(std::span<const float> x) {
    VectorQuant q;
    q.scale = channel_scale(x.data(), x.size());
    q.q.resize(x.size());
    for (size_t j = 0; j < x.size(); ++j) q.q[j] = quantize_exact(x[j], q.scale);
    return q;
}

bool quantizable(const Tensor& t) {
    return t.dtype == DType::F32 && t.dims.size() >= 2;
}

Tensor quantize_tensor(const Tensor& t, QuantPolicy policy) {
    if (t.dtype != DType::F32) throw FormatError("tensor already quantized: " + t.name);
    Tensor q;
    q.name = t.name;
    q.dtype = DType::I8;
    q.dims = t.dims;
    q.i8.resize(t.numel());
    const size_t rows = t.rows();
    const size_t cols = t.row_size();
    if (policy == QuantPolicy::PerTensor) {
        const float s = channel_scale(t.f32.data(), t.f32.size());
        q.scales = {s};
        for (size_t j = 0; j < t.f32.size(); ++j) q.i8[j] = quantize_exact(t.f32[j], s);
        return q;
    }
    q.scales.resize(rows);
    for (size_t r = 0; r < rows; ++r) {
        const float* src = t.f32.data() + r * cols;
        const float s = channel_scale(src, cols);
        q.scales[r] = s;
        for (size_t c = 0; c < cols; ++c) q.i8[r * cols + c] = quantize_exact(src[c], s);
    }
    return q;
}

Tensor dequantize_tensor(const Tensor& t) {
    if (t.dtype != DType::I8) return t;
    Tensor d;
    d.name = t.name;
    d.dims = t.dims;
    d.f32.resize(t.numel());
    const size_t rows = t.rows();
    const size_t cols = t.row_size();
    for (size_t r = 0; r < rows; ++r) {
        const float s = t.scale_for_row(r);
        for (size_t c = 0; c < cols; ++c)
            d.f32[r * cols + c] = float(t.i8[r * cols + c]) * s;
    }
    return d;
}

ModelWeights quantize_weights(const ModelWeights& w, QuantPolicy policy) {
    if (w.any_quantized()) throw FormatError("model is already quantized");
    ModelWeights out;
    out.tensors.reserve(w.tensors.size());
    for (const Tensor& t : w.tensors) {
        if (!all_finite(t.f32)) throw NumericError("non-finite weights in " + t.name);
        out.tensors.push_back(quantizable(t) ? quantize_tensor(t, policy) : t);
    }
    out.rebuild_index();
    return out;
}

void qmatvec(const Tensor& w, std::span<const float> x, std::span<float> y,
             const Tensor* bias) {
    const size_t rows = w.rows();
    const size_t cols = w.row_size();
    if (x.size() != cols || y.size() != rows)
        throw FormatError("qmatvec shape mismatch for " + w.name);
    if (w.dtype != DType::I8) throw FormatError("qmatvec needs an int8 tensor");

    static thread_local std::vector<int8_t> xq;
    xq.resize(cols);
    float mx = 0.0f;
    for (float v : x) mx = std::max(mx, std::fabs(v));
    const float scale_x = mx == 0.0f ? 1.0f : mx / 127.0f;
    const float inv = 1.0f / scale_x;
    for (size_t j = 0; j < cols; ++j) xq[j] = quantize_fast(x[j], inv);

    const float* b = bias ? bias->f32.data() : nullptr;
    for (size_t r = 0; r < rows; ++r) {
        const int32_t acc = dot_i8(w.i8.data() + r * cols, xq.data(), cols);
        const float v = float(acc) * w.scale_for_row(r) * scale_x;
        y[r] = b ? v + b[r] : v;
    }
}

double quantizable_payload_fraction(const ModelWeights& w) {
    uint64_t quant = 0;
    const uint64_t total = file_bytes(w);
    for (const Tensor& t : w.tensors)
        if (t.dims.size() >= 2) quant += t.payload_bytes();
    return total == 0 ? 0.0 : double(quant) / double(total);
}

SizeReport size_report(const ModelWeights& w, const ModelConfig& cfg) {
    SizeReport rep;
    rep.file_bytes = file_bytes(w);

    // Resident weights: float payloads stay 4 bytes/value, int8 one, plus
    // per-channel scales.
    uint64_t weights = 0;
    for (const Tensor& t : w.tensors)
        weights += t.payload_bytes() + t.scales.size() * 4;

    // Streaming caches, constant in stream length.
    const uint64_t enc_caches =
        uint64_t(cfg.enc_layers) *
        (2 * cfg.enc_left_context * cfg.enc_dim + (cfg.conv_kernel - 1) * cfg.enc_dim) * 4;
    const uint64_t dec_window = uint64_t(cfg.k) * cfg.enc_dim * 3 * 4; // frame+key+value
    const uint64_t lstm_state = uint64_t(cfg.dec_layers) * cfg.dec_dim * 2 * 4;
    const uint64_t postnet_cache =
        uint64_t(kPostNetLayers) * (kPostNetKernel - 1) * kPostNetChannels * 4;
    uint64_t voc_cache = 0;
    uint32_t ch = kVocoderBaseChannels;
    for (uint32_t s = 0; s < 4; ++s) {
        const uint32_t out_ch = ch / 2;
        voc_cache += 2 * kVocoderUpsample[s] * out_ch * 4;             // pending overlap
        voc_cache += 2 * (kVocoderResKernel - 1) * out_ch * 4;        // res conv history
        ch = out_ch;
    }
    voc_cache += (kVocoderOutKernel - 1) * ch * 4;

    // Activation workspace: a few vectors of the widest layer per stage.
    const uint64_t workspace =
        8 * uint64_t(std::max({cfg.enc_dim, cfg.dec_dim, 4 * cfg.dec_dim,
                               kVocoderBaseChannels * kVocoderUpsample[0]})) *
        4;

    rep.est_peak_memory_bytes =
        weights + enc_caches + dec_window + lstm_state + postnet_cache + voc_cache + workspace;
    return rep;
}

} // namespace simulstream
