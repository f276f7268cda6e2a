#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simulstream/config.hpp"
#include "simulstream/model_io.hpp"

namespace simulstream {

// Bounded blocking SPSC queue. push blocks while full (backpressure,
// never drops), pop blocks until an item arrives or the channel is
// closed and drained.
template <typename T>
class BoundedChannel {
  public:
    explicit BoundedChannel(size_t capacity) : capacity_(capacity) {}

    void push(T item) {
        std::unique_lock lock(m_);
        cv_space_.wait(lock, [&] { return q_.size() < capacity_ || closed_; });
        if (closed_) throw std::logic_error("push on closed channel");
        q_.push_back(std::move(item));
        cv_item_.notify_one();
    }

    std::optional<T> pop() {
        std::unique_lock lock(m_);
        cv_item_.wait(lock, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return std::nullopt;
        T item = std::move(q_.front());
        q_.pop_front();
        cv_space_.notify_one();
        return item;
    }

    // Non-blocking: nullopt means currently empty (and possibly closed).
    std::optional<T> try_pop() {
        std::unique_lock lock(m_);
        if (q_.empty()) return std::nullopt;
        T item = std::move(q_.front());
        q_.pop_front();
        cv_space_.notify_one();
        return item;
    }

    bool closed_and_empty() {
        std::unique_lock lock(m_);
        return closed_ && q_.empty();
    }

    void close() {
        std::unique_lock lock(m_);
        closed_ = true;
        cv_item_.notify_all();
        cv_space_.notify_all();
    }

  private:
    size_t capacity_;
    std::deque<T> q_;
    std::mutex m_;
    std::condition_variable cv_item_, cv_space_;
    bool closed_ = false;
};

enum class PipelineMode { Sequential, Concurrent };

struct PipelineConfig {
    PipelineMode mode = PipelineMode::Sequential;
    bool realtime_pacing = false;  // sleep to the 20 ms packet cadence
    size_t channel_capacity = 256; // must be >= k in concurrent mode
    uint32_t k_override = 0;       // 0 = use ModelConfig.k
    uint64_t max_flush_steps = 100;

    void validate(const ModelConfig& model) const;
};

// One row per decoder output frame. encoder_ms is the mean per-frame
// processing time of the encoder frames consumed since the previous
// WRITE (the warm-up frames average into the first row); rtf pairs the
// 25 ms output duration with this row's decoder-vocoder time.
struct FrameMetrics {
    uint64_t frame_index = 0;
    double encoder_ms = 0.0;
    double decoder_vocoder_ms = 0.0;
    double wall_emit_ms = 0.0;
    double rtf = 0.0;
};

struct MetricsSeries {
    std::vector<FrameMetrics> frames;
    std::vector<double> encoder_frame_ms; // raw per-encoder-frame timings
    double first_output_ms = -1.0;        // wall time of the first sample
    double total_wall_ms = 0.0;
    double frontend_ms_total = 0.0; // mel extraction share of the encoder stage
    uint64_t encoder_frames = 0;
    uint64_t decoder_steps = 0;

    double mean_encoder_ms() const;
    double mean_decoder_vocoder_ms() const;
};

// frame_duration_ms / processing_ms. Non-positive processing time sets
// *measured_too_fast and returns +infinity.
double compute_rtf(double frame_duration_ms, double processing_ms,
                   bool* measured_too_fast = nullptr);

// Sequential: mean(encoder_ms + decoder_vocoder_ms) <= budget.
// Concurrent: mean(max(encoder_ms, decoder_vocoder_ms)) <= budget.
bool feasibility_check(std::span<const FrameMetrics> metrics, PipelineMode mode,
                       double budget_ms = kDecFrameMs);

struct RunResult {
    std::vector<float> waveform; // 24 kHz, in [-1, 1]
    MetricsSeries metrics;
};

// End-to-end run: packets -> mel -> encoder -> (channel) -> wait-k
// decoder + postnet -> vocoder. Concurrent mode uses one worker per
// stage over a bounded channel; sequential interleaves both in the
// caller's thread. Output values are mode-independent.
RunResult run_streaming(const PipelineConfig& cfg, const ModelConfig& model,
                        const ModelWeights& weights,
                        std::span<const int16_t> samples);

struct BenchRow {
    uint32_t decoder_dim = 0;
    uint32_t layers = 0;
    double latency_ms = 0.0; // mean decoder-vocoder time per output frame
    double rtf = 0.0;
    double size_mb = 0.0;
    double memory_mb = 0.0;
    std::string dtype; // "f32" | "i8"
};

struct BenchReport {
    std::vector<BenchRow> rows;
};

struct BenchOptions {
    std::vector<std::pair<uint32_t, uint32_t>> configs; // (dec_dim, layers)
    bool int8 = false;
    uint32_t repeat = 1;      // timing = median of repeats
    uint32_t enc_layers = 16; // shrink for desk-scale runs
    uint32_t k = 150;
    double duration_s = 5.0;  // synthetic input length
    uint64_t seed = 0;
};

BenchReport bench(const BenchOptions& opts);

void write_bench_report(const BenchReport& report, const std::filesystem::path& path);
void write_metrics(const MetricsSeries& metrics, const std::filesystem::path& path);

} // namespace simulstream
