#include "simulstream/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "simulstream/common.hpp"
#include "simulstream/rng.hpp"

namespace simulstream {

void ModelConfig::validate() const {
    if (enc_dim == 0 || enc_heads == 0 || enc_dim % enc_heads != 0)
        throw ConfigError("enc_dim must be a positive multiple of enc_heads");
    if (enc_layers == 0 || dec_layers == 0 || dec_dim == 0)
        throw ConfigError("layer counts and dims must be positive");
    if (enc_left_context == 0)
        throw ConfigError("enc_left_context must be >= 1");
    if (conv_kernel < 2)
        throw ConfigError("conv_kernel must be >= 2");
    if (k == 0)
        throw ConfigError("wait-k must be >= 1");
    if (mel_bins == 0 || out_mels == 0)
        throw ConfigError("mel_bins and out_mels must be positive");
    if (rate_in != 16000 || rate_out != 24000)
        throw ConfigError("rates are fixed at 16000 in / 24000 out");
}

namespace {

using nlohmann::json;

const char* const kConfigKeys[] = {"enc_layers", "enc_dim",  "enc_heads",
                                   "enc_left_context", "conv_kernel", "dec_layers",
                                   "dec_dim", "k", "out_mels", "mel_bins", "rates"};

} // namespace

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("config root must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* k : kConfigKeys) known = known || key == k;
        if (!known) throw FormatError("unknown config field: " + key);
    }
    ModelConfig c;
    auto get = [&](const char* key, uint32_t& out) {
        if (j.contains(key)) out = j.at(key).get<uint32_t>();
    };
    get("enc_layers", c.enc_layers);
    get("enc_dim", c.enc_dim);
    get("enc_heads", c.enc_heads);
    get("enc_left_context", c.enc_left_context);
    get("conv_kernel", c.conv_kernel);
    get("dec_layers", c.dec_layers);
    get("dec_dim", c.dec_dim);
    get("k", c.k);
    get("out_mels", c.out_mels);
    get("mel_bins", c.mel_bins);
    if (j.contains("rates")) {
        c.rate_in = j.at("rates").at("in").get<uint32_t>();
        c.rate_out = j.at("rates").at("out").get<uint32_t>();
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

std::string ModelConfig::to_json() const {
    json j;
    j["enc_layers"] = enc_layers;
    j["enc_dim"] = enc_dim;
    j["enc_heads"] = enc_heads;
    j["enc_left_context"] = enc_left_context;
    j["conv_kernel"] = conv_kernel;
    j["dec_layers"] = dec_layers;
    j["dec_dim"] = dec_dim;
    j["k"] = k;
    j["out_mels"] = out_mels;
    j["mel_bins"] = mel_bins;
    j["rates"] = {{"in", rate_in}, {"out", rate_out}};
    return j.dump(2);
}

void ModelConfig::to_json_file(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file: " + path.string());
    out << to_json() << "\n";
}

const Tensor& ModelWeights::at(std::string_view name) const {
    auto it = index.find(name);
    if (it == index.end()) throw FormatError("missing tensor: " + std::string(name));
    return tensors[it->second];
}

Tensor& ModelWeights::at(std::string_view name) {
    auto it = index.find(name);
    if (it == index.end()) throw FormatError("missing tensor: " + std::string(name));
    return tensors[it->second];
}

void ModelWeights::rebuild_index() {
    index.clear();
    for (size_t i = 0; i < tensors.size(); ++i) index[tensors[i].name] = i;
}

bool ModelWeights::any_quantized() const {
    for (const Tensor& t : tensors)
        if (t.quantized()) return true;
    return false;
}

std::vector<TensorSpec> model_tensor_specs(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<TensorSpec> specs;
    auto add = [&](std::string name, std::vector<uint32_t> dims) {
        specs.push_back({std::move(name), std::move(dims)});
    };

    const uint32_t d = cfg.enc_dim;
    add("enc.subsample.w", {d, 2 * cfg.mel_bins});
    add("enc.subsample.b", {d});
    for (uint32_t i = 0; i < cfg.enc_layers; ++i) {
        const std::string p = "enc.b" + std::to_string(i) + ".";
        add(p + "proj_in.w", {d, d});
        add(p + "proj_in.b", {d});
        for (const char* h : {"q", "k", "v", "out"}) {
            add(p + "attn." + h + ".w", {d, d});
            add(p + "attn." + h + ".b", {d});
        }
        add(p + "conv.pre.w", {d, d});
        add(p + "conv.pre.b", {d});
        add(p + "conv.dw.w", {d, cfg.conv_kernel});
        add(p + "conv.dw.b", {d});
        add(p + "conv.post.w", {d, d});
        add(p + "conv.post.b", {d});
        add(p + "proj_out.w", {d, d});
        add(p + "proj_out.b", {d});
        add(p + "ln.g", {d});
        add(p + "ln.b", {d});
    }

    add("dec.prenet.l0.w", {kPreNetDim, cfg.out_mels});
    add("dec.prenet.l0.b", {kPreNetDim});
    add("dec.prenet.l1.w", {kPreNetDim, kPreNetDim});
    add("dec.prenet.l1.b", {kPreNetDim});
    add("dec.attn.q.w", {d, cfg.dec_dim});
    add("dec.attn.k.w", {d, d});
    add("dec.attn.v.w", {d, d});
    const uint32_t h = cfg.dec_dim;
    for (uint32_t i = 0; i < cfg.dec_layers; ++i) {
        const std::string p = "dec.lstm" + std::to_string(i) + ".";
        const uint32_t in = (i == 0 ? kPreNetDim : h) + d;
        add(p + "w_ih", {4 * h, in});
        add(p + "w_hh", {4 * h, h});
        add(p + "b", {4 * h});
    }
    add("dec.mel.w", {cfg.out_mels, h});
    add("dec.mel.b", {cfg.out_mels});
    add("dec.stop.w", {1, h});
    add("dec.stop.b", {1});
    uint32_t pn_in = cfg.out_mels;
    for (uint32_t i = 0; i < kPostNetLayers; ++i) {
        const uint32_t pn_out = (i + 1 == kPostNetLayers) ? cfg.out_mels : kPostNetChannels;
        const std::string p = "dec.postnet.c" + std::to_string(i) + ".";
        add(p + "w", {pn_out, pn_in, kPostNetKernel});
        add(p + "b", {pn_out});
        pn_in = pn_out;
    }

    add("voc.in.w", {kVocoderBaseChannels, cfg.out_mels});
    add("voc.in.b", {kVocoderBaseChannels});
    uint32_t ch = kVocoderBaseChannels;
    for (uint32_t s = 0; s < 4; ++s) {
        const uint32_t out_ch = ch / 2;
        const std::string p = "voc.up" + std::to_string(s) + ".";
        add(p + "w", {out_ch, ch, 2 * kVocoderUpsample[s]});
        add(p + "b", {out_ch});
        for (uint32_t r = 0; r < 2; ++r) {
            const std::string rp = p + "res" + std::to_string(r) + ".";
            add(rp + "c0.w", {out_ch, out_ch, kVocoderResKernel});
            add(rp + "c0.b", {out_ch});
            add(rp + "c1.w", {out_ch, out_ch});
            add(rp + "c1.b", {out_ch});
        }
        ch = out_ch;
    }
    add("voc.out.w", {1, ch, kVocoderOutKernel});
    add("voc.out.b", {1});
    return specs;
}

ModelWeights init_random(const ModelConfig& cfg, uint64_t seed) {
    ModelWeights w;
    InitRng rng(seed);
    for (const TensorSpec& spec : model_tensor_specs(cfg)) {
        Tensor t = make_f32(spec.name, spec.dims);
        if (t.dims.size() >= 2) {
            const float limit = 1.0f / std::sqrt(float(t.row_size()));
            for (float& v : t.f32) v = rng.symmetric(limit);
        } else if (spec.name.ends_with(".g")) {
            for (float& v : t.f32) v = 1.0f; // norm scales
        } // rank-1 biases stay zero
        w.tensors.push_back(std::move(t));
    }
    w.rebuild_index();
    return w;
}

namespace {

void put_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<uint32_t>(v));
}

struct Reader {
    const uint8_t* p;
    size_t left;
    std::string context;

    void need(size_t n) {
        if (left < n)
            throw FormatError("weight file truncated" +
                              (context.empty() ? "" : " in tensor " + context));
    }
    uint8_t u8() {
        need(1);
        uint8_t v = *p;
        ++p;
        --left;
        return v;
    }
    uint16_t u16() {
        need(2);
        uint16_t v = uint16_t(p[0]) | uint16_t(p[1]) << 8;
        p += 2;
        left -= 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void bytes(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n;
        left -= n;
    }
};

size_t tensor_entry_bytes(const std::string& name, size_t rank, size_t scale_count,
                          size_t payload) {
    return 2 + name.size() + 1 + 1 + 4 * rank + 4 + 4 * scale_count + payload;
}

} // namespace

uint64_t file_bytes(const ModelWeights& w) {
    uint64_t total = 4 + 2 + 4;
    for (const Tensor& t : w.tensors)
        total += tensor_entry_bytes(t.name, t.dims.size(), t.scales.size(),
                                    t.payload_bytes());
    return total;
}

uint64_t predicted_file_bytes(const ModelConfig& cfg, DType weight_dtype) {
    uint64_t total = 4 + 2 + 4;
    for (const TensorSpec& s : model_tensor_specs(cfg)) {
        size_t numel = 1;
        for (uint32_t d : s.dims) numel *= d;
        // rank >= 2 tensors carry the requested dtype; rank 1 stays f32
        const bool quant = weight_dtype == DType::I8 && s.dims.size() >= 2;
        const size_t payload = quant ? numel : numel * 4;
        const size_t scale_count = quant ? s.dims[0] : 0;
        total += tensor_entry_bytes(s.name, s.dims.size(), scale_count, payload);
    }
    return total;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
    std::string out;
    out.reserve(file_bytes(w));
    out.append(kWeightFileMagic, 4);
    put_u16(out, kWeightFileVersion);
    put_u32(out, uint32_t(w.tensors.size()));
    for (const Tensor& t : w.tensors) {
        if (t.name.size() > 0xffff) throw FormatError("tensor name too long: " + t.name);
        put_u16(out, uint16_t(t.name.size()));
        out.append(t.name);
        out.push_back(char(t.dtype));
        out.push_back(char(t.dims.size()));
        for (uint32_t d : t.dims) put_u32(out, d);
        put_u32(out, uint32_t(t.scales.size()));
        for (float s : t.scales) put_f32(out, s);
        if (t.dtype == DType::F32) {
            if constexpr (std::endian::native == std::endian::little) {
                out.append(reinterpret_cast<const char*>(t.f32.data()), t.f32.size() * 4);
            } else {
                for (float v : t.f32) put_f32(out, v);
            }
        } else {
            out.append(reinterpret_cast<const char*>(t.i8.data()), t.i8.size());
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open weight file: " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{reinterpret_cast<const uint8_t*>(data.data()), data.size(), ""};
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kWeightFileMagic, 4) != 0)
        throw FormatError("not a SMWT weight file: " + path.string());
    const uint16_t version = r.u16();
    if (version != kWeightFileVersion)
        throw FormatError("unsupported weight file version " + std::to_string(version));
    const uint32_t count = r.u32();

    ModelWeights w;
    w.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Tensor t;
        const uint16_t name_len = r.u16();
        t.name.resize(name_len);
        r.bytes(t.name.data(), name_len);
        r.context = t.name;
        const uint8_t dtype = r.u8();
        if (dtype > uint8_t(DType::I8))
            throw FormatError("unknown dtype " + std::to_string(dtype) + " in tensor " + t.name);
        t.dtype = DType(dtype);
        const uint8_t rank = r.u8();
        t.dims.resize(rank);
        for (uint8_t d = 0; d < rank; ++d) t.dims[d] = r.u32();
        const uint32_t scale_count = r.u32();
        t.scales.resize(scale_count);
        for (uint32_t s = 0; s < scale_count; ++s) t.scales[s] = r.f32();
        const size_t numel = t.numel();
        if (t.dtype == DType::F32) {
            t.f32.resize(numel);
            if constexpr (std::endian::native == std::endian::little) {
                r.bytes(t.f32.data(), numel * 4);
            } else {
                for (size_t e = 0; e < numel; ++e) t.f32[e] = r.f32();
            }
        } else {
            if (scale_count != 1 && scale_count != t.rows())
                throw FormatError("tensor " + t.name + " has bad scale count");
            t.i8.resize(numel);
            r.bytes(t.i8.data(), numel);
        }
        w.tensors.push_back(std::move(t));
    }
    if (r.left != 0) throw FormatError("trailing bytes after last tensor");
    w.rebuild_index();
    return w;
}

} // namespace simulstream
