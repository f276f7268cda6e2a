#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "simulstream/model_io.hpp"
#include "simulstream/wav.hpp"
#include "test_util.hpp"

using namespace simulstream;
namespace fs = std::filesystem;
namespace tu = testutil;

namespace {

struct CliFixture {
    fs::path dir;
    CliFixture() {
        dir = fs::temp_directory_path() / ("simulstream_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~CliFixture() { fs::remove_all(dir); }

    // Returns the exit code; stdout+stderr land in `log`.
    int run(const std::string& args, std::string* log = nullptr) const {
        const fs::path out = dir / "cmd.log";
        const std::string cmd = std::string(SIMULSTREAM_CLI_PATH) + " " + args + " > " +
                                out.string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        if (log) {
            std::ifstream f(out);
            log->assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
        }
        return WEXITSTATUS(status);
    }

    fs::path make_wav(const char* name, double seconds, uint64_t seed) const {
        InitRng rng(seed);
        const std::vector<int16_t> pcm = tu::random_pcm(rng, size_t(seconds * 16000));
        const fs::path p = dir / name;
        write_wav(p, pcm, 16000);
        return p;
    }

    fs::path make_config(const char* name) const {
        const fs::path p = dir / name;
        tu::tiny_config().to_json_file(p);
        return p;
    }

    fs::path make_model(const char* name) const {
        const fs::path p = dir / name;
        save_weights(init_random(tu::tiny_config(), 5), p);
        return p;
    }

    uint64_t file_hash(const fs::path& p) const {
        std::ifstream f(p, std::ios::binary);
        uint64_t h = 1469598103934665603ull;
        char c;
        while (f.get(c)) {
            h ^= uint64_t(uint8_t(c));
            h *= 1099511628211ull;
        }
        return h;
    }
};

} // namespace

TEST_CASE("run: valid invocation writes a 24 kHz WAV and exits 0") {
    CliFixture cli;
    const fs::path in = cli.make_wav("in.wav", 1.5, 1);
    const fs::path cfg = cli.make_config("cfg.json");
    const fs::path out = cli.dir / "out.wav";
    const int code =
        cli.run("run --config " + cfg.string() + " --input " + in.string() +
                " --output " + out.string() + " --metrics " + (cli.dir / "m.jsonl").string());
    CHECK(code == 0);
    const WavData wav = read_wav(out);
    CHECK(wav.sample_rate == 24000);
    CHECK(!wav.samples.empty());
    CHECK(fs::exists(cli.dir / "m.jsonl"));
}

TEST_CASE("run: warns when the input is shorter than the wait-k delay") {
    CliFixture cli;
    const fs::path in = cli.make_wav("short.wav", 2.0, 2);
    const fs::path out = cli.dir / "out.wav";
    std::string log;
    const int code = cli.run("run --k 150 --input " + in.string() + " --output " +
                                 out.string() + " --config " + cli.make_config("c.json").string(),
                             &log);
    CHECK(code == 0);
    CHECK(log.find("shorter than wait-k delay") != std::string::npos);
}

TEST_CASE("run: offline mode matches single-threaded streaming output") {
    CliFixture cli;
    const fs::path in = cli.make_wav("in.wav", 1.2, 3);
    const fs::path cfg = cli.make_config("cfg.json");
    const fs::path a = cli.dir / "a.wav", b = cli.dir / "b.wav";
    CHECK(cli.run("run --mode offline --config " + cfg.string() + " --input " + in.string() +
                  " --output " + a.string()) == 0);
    CHECK(cli.run("run --mode streaming --threads 1 --no-pace --config " + cfg.string() +
                  " --input " + in.string() + " --output " + b.string()) == 0);
    CHECK(cli.file_hash(a) == cli.file_hash(b));
}

TEST_CASE("run: two-thread mode matches one-thread output") {
    CliFixture cli;
    const fs::path in = cli.make_wav("in.wav", 1.2, 4);
    const fs::path cfg = cli.make_config("cfg.json");
    const fs::path a = cli.dir / "a.wav", b = cli.dir / "b.wav";
    CHECK(cli.run("run --threads 1 --config " + cfg.string() + " --input " + in.string() +
                  " --output " + a.string()) == 0);
    CHECK(cli.run("run --threads 2 --config " + cfg.string() + " --input " + in.string() +
                  " --output " + b.string()) == 0);
    CHECK(cli.file_hash(a) == cli.file_hash(b));
}

TEST_CASE("quantize + inspect: dtype column flips to i8, predictions match disk") {
    CliFixture cli;
    const fs::path model = cli.make_model("m.smwt");
    const fs::path q = cli.dir / "m_i8.smwt";
    std::string log;
    CHECK(cli.run("quantize --in " + model.string() + " --out " + q.string()) == 0);
    CHECK(cli.run("inspect --model " + q.string(), &log) == 0);
    CHECK(log.find(" i8") != std::string::npos);
    CHECK(log.find("predicted file bytes") != std::string::npos);

    // a second quantize pass must refuse
    const int again = cli.run("quantize --in " + q.string() + " --out " +
                                  (cli.dir / "twice.smwt").string(),
                              &log);
    CHECK(again == 3);
    CHECK(log.find("already quantized") != std::string::npos);
}

TEST_CASE("verify: fresh random model passes at 1e-4, tol 0 fails") {
    CliFixture cli;
    std::string log;
    CHECK(cli.run("verify --seed 1 --tolerance 1e-4", &log) == 0);
    CHECK(log.find("PASS") != std::string::npos);
    CHECK(cli.run("verify --seed 1 --tolerance 0", &log) == 1);
}

TEST_CASE("verify: an injected cache fault fails with the module name") {
    CliFixture cli;
    std::string log;
    CHECK(cli.run("verify --inject-fault postnet", &log) == 1);
    CHECK(log.find("postnet") != std::string::npos);
    CHECK(log.find("FAIL") != std::string::npos);
}

TEST_CASE("bench: rows per config, int8 variants, csv report") {
    CliFixture cli;
    std::string log;
    const fs::path report = cli.dir / "bench.csv";
    CHECK(cli.run("bench --configs 256x2,256x4 --enc-layers 1 --k 4 --duration-s 0.6 "
                  "--int8 --repeat 2 --report " +
                      report.string(),
                  &log) == 0);
    std::ifstream f(report);
    std::string line;
    std::getline(f, line);
    CHECK(line == "decoder_dim,layers,latency_ms,rtf,size_mb,memory_mb,dtype");
    size_t rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
}

TEST_CASE("SIMULSTREAM_SEED overrides the default seed") {
    CliFixture cli;
    const fs::path in = cli.make_wav("in.wav", 1.2, 6);
    const fs::path cfg = cli.make_config("cfg.json");
    const fs::path a = cli.dir / "a.wav", b = cli.dir / "b.wav", c = cli.dir / "c.wav";
    // env seed and the equivalent flag must agree; a different seed must not
    CHECK(cli.run("run --seed 9 --config " + cfg.string() + " --input " + in.string() +
                  " --output " + a.string()) == 0);
    setenv("SIMULSTREAM_SEED", "9", 1);
    CHECK(cli.run("run --config " + cfg.string() + " --input " + in.string() +
                  " --output " + b.string()) == 0);
    setenv("SIMULSTREAM_SEED", "10", 1);
    CHECK(cli.run("run --config " + cfg.string() + " --input " + in.string() +
                  " --output " + c.string()) == 0);
    setenv("SIMULSTREAM_SEED", "junk", 1);
    CHECK(cli.run("run --config " + cfg.string() + " --input " + in.string() +
                  " --output " + (cli.dir / "d.wav").string()) == 2);
    unsetenv("SIMULSTREAM_SEED");
    CHECK(cli.file_hash(a) == cli.file_hash(b));
    CHECK(cli.file_hash(a) != cli.file_hash(c));
}

TEST_CASE("usage and format errors map to exit codes 2 and 3") {
    CliFixture cli;
    CHECK(cli.run("run --input missing.wav") == 2);        // missing required --output
    CHECK(cli.run("frobnicate") == 2);                     // unknown subcommand
    const fs::path bogus = cli.dir / "bogus.smwt";
    std::ofstream(bogus) << "not a weight file";
    CHECK(cli.run("inspect --model " + bogus.string()) == 3);
    const fs::path nowav = cli.dir / "no.wav";
    std::ofstream(nowav) << "RIFFnope";
    CHECK(cli.run("run --input " + nowav.string() + " --output " +
                  (cli.dir / "o.wav").string()) == 3);
}
