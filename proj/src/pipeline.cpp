#include "simulstream/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <thread>

#include <json.hpp>

#include "simulstream/common.hpp"
#include "simulstream/decoder.hpp"
#include "simulstream/encoder.hpp"
#include "simulstream/frontend.hpp"
#include "simulstream/quantization.hpp"
#include "simulstream/rng.hpp"
#include "simulstream/vocoder.hpp"

namespace simulstream {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

std::vector<AudioPacket> packetize(std::span<const int16_t> samples) {
    std::vector<AudioPacket> out;
    out.reserve((samples.size() + kPacketSamples - 1) / kPacketSamples);
    for (size_t pos = 0; pos < samples.size(); pos += kPacketSamples) {
        AudioPacket p{}; // zero padded tail
        const size_t n = std::min(size_t(kPacketSamples), samples.size() - pos);
        std::copy(samples.begin() + ptrdiff_t(pos), samples.begin() + ptrdiff_t(pos + n),
                  p.samples.begin());
        out.push_back(p);
    }
    return out;
}

struct StampedFrame {
    EncoderFrame frame;
    double encoder_ms = 0.0; // stage time spent producing this frame
};

// Frontend + encoder over the packet stream. Stage time excludes pacing
// sleeps and channel waits.
class EncoderStage {
  public:
    EncoderStage(const ModelConfig& model, const ModelWeights& weights,
                 std::span<const AudioPacket> packets, bool pace, Clock::time_point t0,
                 MetricsSeries& metrics)
        : frontend_(FrontendConfig::from_model(model)), encoder_(model, weights),
          packets_(packets), pace_(pace), t0_(t0), metrics_(metrics) {}

    // Processes packets until one encoder frame is available (or input
    // runs out). Returns nullopt at end of stream.
    std::optional<StampedFrame> next_frame() {
        while (next_packet_ < packets_.size()) {
            if (pace_)
                std::this_thread::sleep_until(
                    t0_ + std::chrono::milliseconds(next_packet_ * kPacketMs));
            const auto tf = Clock::now();
            const std::vector<MelFrame> mels = frontend_.push_samples(packets_[next_packet_]);
            const double fe_ms = ms_between(tf, Clock::now());
            metrics_.frontend_ms_total += fe_ms;
            accum_ms_ += fe_ms; // frontend work runs inside this stage
            ++next_packet_;
            std::optional<StampedFrame> produced;
            for (const MelFrame& mel : mels) {
                const auto te = Clock::now();
                std::optional<EncoderFrame> f = encoder_.encode_step(mel);
                accum_ms_ += ms_between(te, Clock::now());
                if (f) {
                    // a packet carries 2 mel hops, so at most one frame
                    produced = StampedFrame{std::move(*f), accum_ms_};
                    metrics_.encoder_frame_ms.push_back(accum_ms_);
                    accum_ms_ = 0.0;
                }
            }
            if (produced) {
                ++metrics_.encoder_frames;
                return produced;
            }
        }
        return std::nullopt;
    }

  private:
    Frontend frontend_;
    Encoder encoder_;
    std::span<const AudioPacket> packets_;
    bool pace_;
    Clock::time_point t0_;
    MetricsSeries& metrics_;
    size_t next_packet_ = 0;
    double accum_ms_ = 0.0; // frontend+encode time since the last frame
};

// The decoder-vocoder stage, shared by both modes; `pull` is either an
// inline EncoderStage call (sequential) or a channel pop (concurrent).
template <typename PullFn>
void decode_loop(const PipelineConfig& cfg, Decoder& dec, Vocoder& voc, PullFn&& pull,
                 Clock::time_point t0, RunResult& out) {
    bool source_done = false;
    bool stop_seen = false;
    uint64_t flush_steps = 0;
    uint64_t max_total_steps = std::numeric_limits<uint64_t>::max();
    double pending_read_ms = 0.0; // window-update cost folded into the next row
    std::vector<double> consumed_enc_ms;

    for (;;) {
        const SchedulerAction action =
            schedule(dec.frames_received(), dec.steps_emitted(), dec.config().k,
                     source_done, stop_seen, flush_steps, cfg.max_flush_steps,
                     max_total_steps);
        if (action == SchedulerAction::Finish) break;
        if (action == SchedulerAction::Read) {
            std::optional<StampedFrame> f = pull();
            if (!f) {
                source_done = true;
                max_total_steps = dec.config().max_total_factor * dec.frames_received();
                continue;
            }
            const auto tr = Clock::now();
            dec.read_frame(f->frame);
            pending_read_ms += ms_between(tr, Clock::now());
            consumed_enc_ms.push_back(f->encoder_ms);
            continue;
        }

        const auto tw = Clock::now();
        const DecoderFrame frame = dec.step();
        const std::vector<float> refined = dec.postnet_apply(frame.mel);
        const std::vector<float> audio = voc.vocode_step(refined);
        const double step_ms = ms_between(tw, Clock::now()) + pending_read_ms;
        pending_read_ms = 0.0;

        if (source_done) {
            ++flush_steps;
            if (frame.stop_prob > 0.5f) stop_seen = true;
        }

        out.waveform.insert(out.waveform.end(), audio.begin(), audio.end());
        const double wall = ms_between(t0, Clock::now());
        if (out.metrics.first_output_ms < 0.0) out.metrics.first_output_ms = wall;

        FrameMetrics row;
        row.frame_index = frame.step;
        if (!consumed_enc_ms.empty()) {
            double sum = 0.0;
            for (double v : consumed_enc_ms) sum += v;
            row.encoder_ms = sum / double(consumed_enc_ms.size());
            consumed_enc_ms.clear();
        }
        row.decoder_vocoder_ms = step_ms;
        row.wall_emit_ms = wall;
        row.rtf = compute_rtf(kDecFrameMs, step_ms);
        out.metrics.frames.push_back(row);
        ++out.metrics.decoder_steps;
    }
}

} // namespace

void PipelineConfig::validate(const ModelConfig& model) const {
    const uint32_t k = k_override ? k_override : model.k;
    if (mode == PipelineMode::Concurrent && channel_capacity < k)
        throw ConfigError("channel_capacity must be >= k in concurrent mode");
    if (channel_capacity == 0) throw ConfigError("channel_capacity must be positive");
}

double MetricsSeries::mean_encoder_ms() const {
    if (encoder_frame_ms.empty()) return 0.0;
    double sum = 0.0;
    for (double v : encoder_frame_ms) sum += v;
    return sum / double(encoder_frame_ms.size());
}

double MetricsSeries::mean_decoder_vocoder_ms() const {
    if (frames.empty()) return 0.0;
    double sum = 0.0;
    for (const FrameMetrics& f : frames) sum += f.decoder_vocoder_ms;
    return sum / double(frames.size());
}

double compute_rtf(double frame_duration_ms, double processing_ms,
                   bool* measured_too_fast) {
    if (measured_too_fast) *measured_too_fast = false;
    if (processing_ms <= 0.0) {
        if (measured_too_fast) *measured_too_fast = true;
        return std::numeric_limits<double>::infinity();
    }
    return frame_duration_ms / processing_ms;
}

bool feasibility_check(std::span<const FrameMetrics> metrics, PipelineMode mode,
                       double budget_ms) {
    if (metrics.empty()) return true;
    double sum = 0.0;
    for (const FrameMetrics& m : metrics) {
        sum += mode == PipelineMode::Sequential
                   ? m.encoder_ms + m.decoder_vocoder_ms
                   : std::max(m.encoder_ms, m.decoder_vocoder_ms);
    }
    return sum / double(metrics.size()) <= budget_ms;
}

RunResult run_streaming(const PipelineConfig& cfg, const ModelConfig& model,
                        const ModelWeights& weights, std::span<const int16_t> samples) {
    model.validate();
    cfg.validate(model);
    ModelConfig m = model;
    if (cfg.k_override) m.k = cfg.k_override;

    const std::vector<AudioPacket> packets = packetize(samples);
    RunResult out;
    const auto t0 = Clock::now();

    Decoder dec(m, weights);
    Vocoder voc(m, weights);

    if (cfg.mode == PipelineMode::Sequential) {
        EncoderStage enc(m, weights, packets, cfg.realtime_pacing, t0, out.metrics);
        decode_loop(cfg, dec, voc, [&] { return enc.next_frame(); }, t0, out);
    } else {
        BoundedChannel<StampedFrame> channel(cfg.channel_capacity);
        std::exception_ptr enc_error;
        MetricsSeries enc_metrics; // owned by the encoder worker
        std::thread worker([&] {
            try {
                EncoderStage enc(m, weights, packets, cfg.realtime_pacing, t0, enc_metrics);
                while (std::optional<StampedFrame> f = enc.next_frame())
                    channel.push(std::move(*f));
            } catch (...) {
                enc_error = std::current_exception();
            }
            channel.close();
        });
        try {
            decode_loop(cfg, dec, voc, [&] { return channel.pop(); }, t0, out);
        } catch (...) {
            channel.close(); // unblock the producer before rethrowing
            worker.join();
            throw;
        }
        worker.join();
        if (enc_error) std::rethrow_exception(enc_error);
        out.metrics.encoder_frame_ms = std::move(enc_metrics.encoder_frame_ms);
        out.metrics.encoder_frames = enc_metrics.encoder_frames;
        out.metrics.frontend_ms_total = enc_metrics.frontend_ms_total;
    }

    // every frame the encoder produced must have been consumed
    if (dec.frames_received() != out.metrics.encoder_frames)
        throw Error("pipeline dropped encoder frames: produced " +
                    std::to_string(out.metrics.encoder_frames) + ", consumed " +
                    std::to_string(dec.frames_received()));

    out.metrics.total_wall_ms = ms_between(t0, Clock::now());
    return out;
}

namespace {

void bench_one(const BenchOptions& opts, uint32_t dim, uint32_t layers,
               BenchReport& report) {
    ModelConfig m;
    m.dec_dim = dim;
    m.dec_layers = layers;
    m.enc_layers = opts.enc_layers;
    m.k = opts.k;
    m.validate();

    const ModelWeights weights = init_random(m, opts.seed);

    // deterministic noise input at the source rate
    InitRng rng(opts.seed ^ 0x5eedULL);
    std::vector<int16_t> input(size_t(opts.duration_s * m.rate_in));
    for (int16_t& s : input) s = int16_t(std::lround(rng.symmetric(8000.0f)));

    auto run_one = [&](const ModelWeights& w, const char* dtype) {
        std::vector<double> latencies;
        const SizeReport size = size_report(w, m);
        for (uint32_t r = 0; r < std::max(1u, opts.repeat); ++r) {
            PipelineConfig pc;
            pc.mode = PipelineMode::Sequential;
            const RunResult res = run_streaming(pc, m, w, input);
            latencies.push_back(res.metrics.mean_decoder_vocoder_ms());
        }
        std::sort(latencies.begin(), latencies.end());
        const double median = latencies[latencies.size() / 2];
        BenchRow row;
        row.decoder_dim = dim;
        row.layers = layers;
        row.latency_ms = median;
        row.rtf = compute_rtf(kDecFrameMs, median);
        row.size_mb = double(size.file_bytes) / 1e6;
        row.memory_mb = double(size.est_peak_memory_bytes) / 1e6;
        row.dtype = dtype;
        report.rows.push_back(row);
    };

    run_one(weights, "f32");
    if (opts.int8) {
        const ModelWeights q = quantize_weights(weights);
        run_one(q, "i8");
    }
}

} // namespace

BenchReport bench(const BenchOptions& opts) {
    BenchReport report;
    for (const auto& [dim, layers] : opts.configs) {
        try {
            bench_one(opts, dim, layers, report);
        } catch (const std::exception& e) {
            // per-config failures are recorded, not fatal
            std::fprintf(stderr, "bench: config %ux%u failed: %s\n", dim, layers, e.what());
        }
    }
    return report;
}

namespace {

nlohmann::json row_json(const BenchRow& r) {
    return {{"decoder_dim", r.decoder_dim}, {"layers", r.layers},
            {"latency_ms", r.latency_ms},   {"rtf", r.rtf},
            {"size_mb", r.size_mb},         {"memory_mb", r.memory_mb},
            {"dtype", r.dtype}};
}

} // namespace

void write_bench_report(const BenchReport& report, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write report: " + path.string());
    if (path.extension() == ".csv") {
        f << "decoder_dim,layers,latency_ms,rtf,size_mb,memory_mb,dtype\n";
        for (const BenchRow& r : report.rows)
            f << r.decoder_dim << ',' << r.layers << ',' << r.latency_ms << ',' << r.rtf
              << ',' << r.size_mb << ',' << r.memory_mb << ',' << r.dtype << '\n';
    } else {
        nlohmann::json j = nlohmann::json::array();
        for (const BenchRow& r : report.rows) j.push_back(row_json(r));
        f << j.dump(2) << "\n";
    }
    if (!f) throw IoError("write failed: " + path.string());
}

void write_metrics(const MetricsSeries& metrics, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write metrics: " + path.string());
    if (path.extension() == ".csv") {
        f << "frame_index,encoder_ms,decoder_vocoder_ms,wall_emit_ms,rtf\n";
        for (const FrameMetrics& m : metrics.frames)
            f << m.frame_index << ',' << m.encoder_ms << ',' << m.decoder_vocoder_ms << ','
              << m.wall_emit_ms << ',' << m.rtf << '\n';
    } else {
        for (const FrameMetrics& m : metrics.frames) {
            nlohmann::json j = {{"frame_index", m.frame_index},
                                {"encoder_ms", m.encoder_ms},
                                {"decoder_vocoder_ms", m.decoder_vocoder_ms},
                                {"wall_emit_ms", m.wall_emit_ms},
                                {"rtf", std::isfinite(m.rtf) ? m.rtf : -1.0}};
            f << j.dump() << "\n";
        }
    }
    if (!f) throw IoError("write failed: " + path.string());
}

} // namespace simulstream
