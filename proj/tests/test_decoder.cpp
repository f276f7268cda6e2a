#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "simulstream/common.hpp"
#include "simulstream/decoder.hpp"
#include "test_util.hpp"

using namespace simulstream;
namespace tu = testutil;

namespace {

EncoderFrame random_enc_frame(InitRng& rng, uint64_t index, uint32_t dim = 256) {
    EncoderFrame f;
    f.index = index;
    f.features = tu::random_vec(rng, dim);
    return f;
}

// Streaming-phase WRITE count for an N-frame source, by replaying the
// scheduler on counters alone. The source is only discovered to be
// exhausted when a READ comes up empty, so pending WRITEs drain first.
uint64_t replay_stream_writes(uint64_t n_frames, uint32_t k) {
    uint64_t frames = 0, steps = 0;
    for (;;) {
        if (schedule(frames, steps, k, false) == SchedulerAction::Read) {
            if (frames == n_frames) return steps;
            ++frames;
        } else {
            ++steps;
        }
    }
}

} // namespace

TEST_CASE("schedule: warm-up reads until k frames arrived") {
    CHECK(schedule(0, 0, 150, false) == SchedulerAction::Read);
    CHECK(schedule(149, 0, 150, false) == SchedulerAction::Read);
    // pacing formula: floor((150-150+1)*20/25) = 0, so one more READ;
    // at 151 frames floor(2*20/25) = 1 > 0 allows the first WRITE
    CHECK(schedule(150, 0, 150, false) == SchedulerAction::Read);
    CHECK(schedule(151, 0, 150, false) == SchedulerAction::Write);
    CHECK(schedule(151, 1, 150, false) == SchedulerAction::Read);
}

TEST_CASE("schedule: termination after the source ends") {
    CHECK(schedule(200, 40, 150, true, true) == SchedulerAction::Finish);
    CHECK(schedule(10, 3, 150, true, false, 0, 100, 40) == SchedulerAction::Write);
    CHECK(schedule(10, 40, 150, true, false, 0, 100, 40) == SchedulerAction::Finish);
    CHECK(schedule(10, 3, 150, true, false, 100, 100, 40) == SchedulerAction::Finish);
    CHECK(schedule(0, 0, 150, true) == SchedulerAction::Finish); // empty source
}

TEST_CASE("schedule: never writes during warm-up while the source lives") {
    InitRng rng(40);
    for (int trial = 0; trial < 200; ++trial) {
        const uint32_t k = 1 + uint32_t(rng.next_u64() % 200);
        const uint64_t frames = rng.next_u64() % k; // strictly below k
        const uint64_t steps = rng.next_u64() % 64;
        CHECK(schedule(frames, steps, k, false) == SchedulerAction::Read);
    }
}

TEST_CASE("schedule: output pacing tracks input duration") {
    for (const auto& [n, k] : std::vector<std::pair<uint64_t, uint32_t>>{
             {199, 150}, {150, 150}, {151, 150}, {300, 50}, {40, 4}, {12, 1}}) {
        const uint64_t writes = replay_stream_writes(n, k);
        const uint64_t expect = n >= k ? (n - k + 1) * 20 / 25 : 0;
        CHECK(writes == expect);
    }
}

TEST_CASE("initial delay is k encoder frames of 20 ms") {
    DecoderConfig cfg;
    cfg.k = 150;
    CHECK(initial_delay_ms(cfg) == 3000.0);
    cfg.k = 100;
    CHECK(initial_delay_ms(cfg) == 2000.0);
    cfg.k = 50;
    CHECK(initial_delay_ms(cfg) == 1000.0);
    cfg.k = 1;
    CHECK(initial_delay_ms(cfg) == 20.0);
}

TEST_CASE("waitk_attend: single-frame window") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 41);
    InitRng rng(42);
    const std::vector<EncoderFrame> window = {random_enc_frame(rng, 0, cfg.enc_dim)};
    const std::vector<float> query = tu::random_vec(rng, cfg.dec_dim);
    const AttendResult res =
        waitk_attend(query, window, w.at("dec.attn.q.w"), w.at("dec.attn.k.w"),
                     w.at("dec.attn.v.w"));
    REQUIRE(res.weights.size() == 1);
    CHECK(res.weights[0] == 1.0f);
    std::vector<float> value(cfg.enc_dim);
    matvec(w.at("dec.attn.v.w"), window[0].features.data(), value.data());
    CHECK(tu::bit_equal(res.context, value));
}

TEST_CASE("waitk_attend: identical frames get uniform weights") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 43);
    InitRng rng(44);
    const EncoderFrame f = random_enc_frame(rng, 0, cfg.enc_dim);
    const std::vector<float> query = tu::random_vec(rng, cfg.dec_dim);
    for (const size_t k : {2u, 5u, 150u}) {
        std::vector<EncoderFrame> window(k, f);
        const AttendResult res =
            waitk_attend(query, window, w.at("dec.attn.q.w"), w.at("dec.attn.k.w"),
                         w.at("dec.attn.v.w"));
        for (float wt : res.weights) CHECK(wt == 1.0f / float(k));
    }
}

TEST_CASE("waitk_attend matches a double-precision softmax oracle") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 45);
    InitRng rng(46);
    std::vector<EncoderFrame> window;
    for (uint64_t i = 0; i < 5; ++i) window.push_back(random_enc_frame(rng, i, cfg.enc_dim));
    const std::vector<float> query = tu::random_vec(rng, cfg.dec_dim);
    const AttendResult res =
        waitk_attend(query, window, w.at("dec.attn.q.w"), w.at("dec.attn.k.w"),
                     w.at("dec.attn.v.w"));

    const Tensor& wq = w.at("dec.attn.q.w");
    const Tensor& wk = w.at("dec.attn.k.w");
    const uint32_t d = cfg.enc_dim;
    std::vector<double> q(d, 0.0);
    for (uint32_t r = 0; r < d; ++r)
        for (uint32_t c = 0; c < cfg.dec_dim; ++c)
            q[r] += double(wq.f32[size_t(r) * cfg.dec_dim + c]) * double(query[c]);
    std::vector<double> logits(window.size());
    for (size_t j = 0; j < window.size(); ++j) {
        std::vector<double> key(d, 0.0);
        for (uint32_t r = 0; r < d; ++r)
            for (uint32_t c = 0; c < d; ++c)
                key[r] += double(wk.f32[size_t(r) * d + c]) * double(window[j].features[c]);
        double s = 0.0;
        for (uint32_t e = 0; e < d; ++e) s += q[e] * key[e];
        logits[j] = s / std::sqrt(double(d));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        denom += l;
    }
    for (size_t j = 0; j < window.size(); ++j)
        CHECK(std::fabs(double(res.weights[j]) - logits[j] / denom) <= 1e-6);
}

TEST_CASE("waitk_attend rejects an empty window") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 47);
    const std::vector<float> query(cfg.dec_dim, 0.0f);
    CHECK_THROWS_AS(waitk_attend(query, {}, w.at("dec.attn.q.w"), w.at("dec.attn.k.w"),
                                 w.at("dec.attn.v.w")),
                    ScheduleError);
}

TEST_CASE("decoder step needs at least one frame") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 48);
    Decoder dec(cfg, w);
    CHECK_THROWS_AS(dec.step(), ScheduleError);
}

TEST_CASE("zero weights: zero mel, stop probability one half") {
    const ModelConfig cfg = tu::tiny_config();
    ModelWeights w = init_random(cfg, 49);
    for (Tensor& t : w.tensors)
        if (t.name.starts_with("dec.")) std::fill(t.f32.begin(), t.f32.end(), 0.0f);
    Decoder dec(cfg, w);
    InitRng rng(50);
    dec.read_frame(random_enc_frame(rng, 0, cfg.enc_dim));
    const DecoderFrame f = dec.step();
    for (float v : f.mel) CHECK(v == 0.0f);
    CHECK(f.stop_prob == 0.5f);
}

TEST_CASE("deterministic replay over 30 steps") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 51);
    auto run = [&] {
        Decoder dec(cfg, w);
        InitRng rng(52);
        std::vector<float> mels;
        for (uint64_t i = 0; i < cfg.k; ++i)
            dec.read_frame(random_enc_frame(rng, i, cfg.enc_dim));
        for (int s = 0; s < 30; ++s) {
            const DecoderFrame f = dec.step();
            mels.insert(mels.end(), f.mel.begin(), f.mel.end());
            mels.push_back(f.stop_prob);
        }
        return mels;
    };
    const std::vector<float> a = run();
    const std::vector<float> b = run();
    CHECK(tu::bit_equal(a, b));
}

TEST_CASE("window keeps only the k most recent frames") {
    ModelConfig cfg = tu::tiny_config();
    cfg.k = 3;
    const ModelWeights w = init_random(cfg, 53);
    Decoder dec(cfg, w);
    InitRng rng(54);
    for (uint64_t i = 0; i < 10; ++i) {
        dec.read_frame(random_enc_frame(rng, i, cfg.enc_dim));
        CHECK(dec.window_size() == std::min<size_t>(i + 1, 3));
    }
    CHECK(dec.frames_received() == 10);
}

TEST_CASE("wait-k locality: frames older than the sliding window never matter") {
    ModelConfig cfg = tu::tiny_config();
    cfg.k = 3;
    const ModelWeights w = init_random(cfg, 55);
    InitRng rng(56);
    std::vector<EncoderFrame> frames;
    for (uint64_t i = 0; i < 8; ++i) frames.push_back(random_enc_frame(rng, i, cfg.enc_dim));

    // two decoders: one saw everything, one only the last 3 frames; with
    // identical LSTM state (fresh) the next step must match bit-exactly
    Decoder all(cfg, w), tail(cfg, w);
    for (const EncoderFrame& f : frames) all.read_frame(f);
    for (size_t i = 5; i < 8; ++i) tail.read_frame(frames[i]);
    const DecoderFrame fa = all.step();
    const DecoderFrame fb = tail.step();
    CHECK(tu::bit_equal(fa.mel, fb.mel));
    CHECK(fa.stop_prob == fb.stop_prob);
}

TEST_CASE("postnet: zero conv weights pass the input through") {
    const ModelConfig cfg = tu::tiny_config();
    ModelWeights w = init_random(cfg, 57);
    for (Tensor& t : w.tensors)
        if (t.name.starts_with("dec.postnet.")) std::fill(t.f32.begin(), t.f32.end(), 0.0f);
    Decoder dec(cfg, w);
    InitRng rng(58);
    const std::vector<float> mel = tu::random_vec(rng, cfg.out_mels);
    const std::vector<float> out = dec.postnet_apply(mel);
    CHECK(tu::bit_equal(out, mel));
}

TEST_CASE("postnet: first frame equals offline with zero left padding") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 59);
    Decoder dec(cfg, w);
    InitRng rng(60);
    const std::vector<std::vector<float>> mels = {tu::random_vec(rng, cfg.out_mels)};
    const std::vector<float> streamed = dec.postnet_apply(mels[0]);
    const auto offline = postnet_offline(mels, cfg, w);
    CHECK(tu::bit_equal(streamed, offline[0]));
}

TEST_CASE("postnet: 20-frame stream matches the offline conv oracle") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 61);
    Decoder dec(cfg, w);
    InitRng rng(62);
    std::vector<std::vector<float>> mels(20);
    for (auto& m : mels) m = tu::random_vec(rng, cfg.out_mels);
    const auto offline = postnet_offline(mels, cfg, w);
    for (size_t i = 0; i < mels.size(); ++i) {
        const std::vector<float> streamed = dec.postnet_apply(mels[i]);
        CHECK(tu::max_abs_diff(streamed, offline[i]) <= 1e-6);
    }
}

TEST_CASE("decoder reset restores the go-frame state") {
    const ModelConfig cfg = tu::tiny_config();
    const ModelWeights w = init_random(cfg, 63);
    InitRng rng(64);
    std::vector<EncoderFrame> frames;
    for (uint64_t i = 0; i < cfg.k; ++i) frames.push_back(random_enc_frame(rng, i, cfg.enc_dim));

    Decoder dec(cfg, w);
    for (const EncoderFrame& f : frames) dec.read_frame(f);
    const DecoderFrame first = dec.step();
    dec.step();
    dec.reset();
    CHECK(dec.frames_received() == 0);
    CHECK(dec.steps_emitted() == 0);
    for (const EncoderFrame& f : frames) dec.read_frame(f);
    const DecoderFrame again = dec.step();
    CHECK(tu::bit_equal(first.mel, again.mel));
}
