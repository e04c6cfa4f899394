#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "generators.hpp"
#include "ras/attention.hpp"
#include "ras/harness.hpp"
#include "ras/trace_io.hpp"
#include "support.hpp"

using namespace ras;
using ras::testing::Gen;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(const fs::path& dir, const std::string& args) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd =
        std::string("\"") + RAS_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = io::read_text(out);
    r.err = io::read_text(err);
    return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string file_bytes(const fs::path& p) { return io::read_text(p); }

/// Bundle, prototypes and a trace equal to the prototypes.
struct Artifacts {
    fs::path bundle, proto, trace;
};

Artifacts write_artifacts(const fs::path& dir) {
    Gen g(31);
    ModelBundle b;
    b.model_id = "cli-test";
    b.dim = 6;
    b.vocab = 12;
    b.weights = Matrix(12, 6);
    b.weights.data = ras::testing::f32_vector(g, 72);
    b.refusal_token_ids = {10, 11};
    PrototypeSet p;
    p.model_id = "cli-test";
    p.dim = 6;
    p.source_query_count = 5;
    for (int n = 0; n < 3; ++n) p.mu.push_back(ras::testing::f32_vector(g, 6));
    ActivationTrace t;
    t.model_id = "cli-test";
    t.query_id = "self";
    t.role = TraceRole::Reformulated;
    t.dim = 6;
    for (std::uint32_t n = 0; n < 3; ++n) t.tokens.push_back({n + 1, p.mu[n], {}, {}});
    Artifacts a{dir / "bundle.rasb", dir / "proto.rasp", dir / "self.rast"};
    io::write_bundle(b, a.bundle);
    io::write_prototypes(p, a.proto);
    io::write_trace(t, a.trace);
    return a;
}

}  // namespace

TEST(Cli, CalibrateFromScores) {
    const auto dir = ras::testing::temp_dir("cli_calibrate");
    Gen g(1);
    std::vector<double> s;
    std::ostringstream text;
    for (int i = 0; i < 100; ++i) {
        s.push_back(g.uniform(0.3, 0.9));
        text << harness::format_double(s.back()) << (i % 7 == 6 ? "\n" : " ");
    }
    io::write_text(dir / "scores.txt", text.str());
    const auto r = run(dir, "calibrate --scores " + q(dir / "scores.txt") + " --out " + q(dir / "params.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto params = io::read_params(dir / "params.json");
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= 100.0;
    EXPECT_NEAR(params.alpha, std::log(99.0) / (1.0 - mean), 1e-9);
    EXPECT_NEAR(params.s_base, mean, 1e-12);
    EXPECT_EQ(params.gamma, 0.3);
    EXPECT_EQ(params.n_tokens, 3u);

    // JSON arrays are accepted too and give the same file.
    nlohmann::json arr = s;
    io::write_text(dir / "scores.json", arr.dump());
    ASSERT_EQ(run(dir, "calibrate --scores " + q(dir / "scores.json") + " --out " + q(dir / "params2.json")).code, 0);
    EXPECT_EQ(file_bytes(dir / "params.json"), file_bytes(dir / "params2.json"));
}

TEST(Cli, ScoreOfPrototypeTraceIsAtTarget) {
    const auto dir = ras::testing::temp_dir("cli_score");
    const auto a = write_artifacts(dir);
    io::write_text(dir / "scores.txt", "0.4 0.6 0.5");
    ASSERT_EQ(run(dir, "calibrate --scores " + q(dir / "scores.txt") + " --out " + q(dir / "params.json")).code, 0);
    const auto r = run(dir, "score --trace " + q(a.trace) + " --proto " + q(a.proto) + " --bundle " + q(a.bundle) +
                                " --params " + q(dir / "params.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_NEAR(j["s"].get<double>(), 1.0, 1e-12);
    EXPECT_NEAR(j["r"].get<double>(), 0.99, 1e-9);
    EXPECT_EQ(j["query_id"], "self");
    EXPECT_TRUE(r.err.empty());
}

TEST(Cli, ScoringAnOriginalTraceWarns) {
    const auto dir = ras::testing::temp_dir("cli_warn");
    const auto a = write_artifacts(dir);
    auto t = io::read_trace(a.trace);
    t.role = TraceRole::Original;
    io::write_trace(t, dir / "orig.rast");
    io::write_text(dir / "scores.txt", "0.4 0.6");
    ASSERT_EQ(run(dir, "calibrate --scores " + q(dir / "scores.txt") + " --out " + q(dir / "params.json")).code, 0);
    const auto r = run(dir, "score --trace " + q(dir / "orig.rast") + " --proto " + q(a.proto) + " --bundle " +
                                q(a.bundle) + " --params " + q(dir / "params.json"));
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(Cli, ExitCodesAndSingleLineErrors) {
    const auto dir = ras::testing::temp_dir("cli_errors");
    const auto a = write_artifacts(dir);

    auto usage = run(dir, "calibrate");
    EXPECT_EQ(usage.code, 2);
    usage = run(dir, "no-such-command");
    EXPECT_EQ(usage.code, 2);
    usage = run(dir, "generate --proto x --params y --mode sideways --toy-seed 0 --corpus z");
    EXPECT_EQ(usage.code, 2);

    const auto missing = run(dir, "build-prototypes --traces " + q(dir / "nowhere") + " --out " + q(dir / "p.rasp"));
    EXPECT_EQ(missing.code, 1);

    auto bytes = io::read_file(a.bundle);
    bytes[0] = 'X';
    io::write_file(dir / "bad.rasb", bytes);
    io::write_text(dir / "scores.txt", "0.4 0.6");
    ASSERT_EQ(run(dir, "calibrate --scores " + q(dir / "scores.txt") + " --out " + q(dir / "params.json")).code, 0);
    const auto format = run(dir, "score --trace " + q(a.trace) + " --proto " + q(a.proto) + " --bundle " +
                                     q(dir / "bad.rasb") + " --params " + q(dir / "params.json"));
    EXPECT_EQ(format.code, 3);
    EXPECT_EQ(format.err.rfind("ras: error[format]: ", 0), 0u) << format.err;
    EXPECT_EQ(std::count(format.err.begin(), format.err.end(), '\n'), 1);

    io::write_text(dir / "ones.txt", "1 1 1");
    const auto numeric = run(dir, "calibrate --scores " + q(dir / "ones.txt") + " --out " + q(dir / "x.json"));
    EXPECT_EQ(numeric.code, 4);
    EXPECT_EQ(numeric.err.rfind("ras: error[degenerate]: ", 0), 0u) << numeric.err;

    io::write_text(dir / "junk.txt", "0.4 zebra");
    EXPECT_EQ(run(dir, "calibrate --scores " + q(dir / "junk.txt") + " --out " + q(dir / "x.json")).code, 3);
}

TEST(Cli, CorpusPrototypesAndFdrAreIdempotent) {
    const auto dir = ras::testing::temp_dir("cli_corpus");
    const std::string corpus_flags = " --n-safe 20 --n-unsafe 20 --n-calibration 10";
    ASSERT_EQ(run(dir, "gen-corpus --out " + q(dir / "c1") + corpus_flags).code, 0);
    ASSERT_EQ(run(dir, "gen-corpus --out " + q(dir / "c2") + corpus_flags).code, 0);
    for (const auto& entry : fs::recursive_directory_iterator(dir / "c1")) {
        if (!entry.is_regular_file()) continue;
        const auto twin = dir / "c2" / fs::relative(entry.path(), dir / "c1");
        ASSERT_TRUE(fs::exists(twin)) << twin;
        EXPECT_EQ(file_bytes(entry.path()), file_bytes(twin)) << entry.path();
    }

    const auto c = dir / "c1";
    for (const char* out : {"p1.rasp", "p2.rasp"}) {
        ASSERT_EQ(run(dir, "build-prototypes --traces " + q(c / "prototype_sources") + " --n-tokens 3 --out " +
                               q(dir / out))
                      .code,
                  0);
    }
    EXPECT_EQ(file_bytes(dir / "p1.rasp"), file_bytes(dir / "p2.rasp"));

    for (const char* out : {"k1.json", "k2.json"}) {
        ASSERT_EQ(run(dir, "calibrate --traces " + q(c / "calibration" / "reformulated") + " --proto " +
                               q(dir / "p1.rasp") + " --bundle " + q(c / "bundle.rasb") + " --out " + q(dir / out))
                      .code,
                  0);
    }
    EXPECT_EQ(file_bytes(dir / "k1.json"), file_bytes(dir / "k2.json"));

    const auto s1 = run(dir, "score --traces " + q(c / "unsafe" / "reformulated") + " --proto " + q(dir / "p1.rasp") +
                                 " --bundle " + q(c / "bundle.rasb") + " --params " + q(dir / "k1.json"));
    ASSERT_EQ(s1.code, 0) << s1.err;
    const auto s2 = run(dir, "score --traces " + q(c / "unsafe" / "reformulated") + " --proto " + q(dir / "p1.rasp") +
                                 " --bundle " + q(c / "bundle.rasb") + " --params " + q(dir / "k1.json"));
    EXPECT_EQ(s1.out, s2.out);
    EXPECT_EQ(nlohmann::json::parse(s1.out).size(), 20u);

    const auto f1 = run(dir, "fdr --safe " + q(c / "safe" / "reformulated") + " --unsafe " +
                                 q(c / "unsafe" / "reformulated") + " --svg " + q(dir / "fdr.svg"));
    ASSERT_EQ(f1.code, 0) << f1.err;
    EXPECT_EQ(f1.out.rfind("layer,fdr,epsilon,n_safe,n_unsafe\n1,", 0), 0u);
    EXPECT_EQ(run(dir, "fdr --safe " + q(c / "safe" / "reformulated") + " --unsafe " + q(c / "unsafe" / "reformulated"))
                  .out,
              f1.out);
    EXPECT_TRUE(fs::exists(dir / "fdr.svg"));

    const std::string pair = "generate --original " + q(c / "unsafe" / "original" / "unsafe-0003.rast") +
                             " --reformulated " + q(c / "unsafe" / "reformulated" / "unsafe-0003.rast") + " --bundle " +
                             q(c / "bundle.rasb") + " --proto " + q(dir / "p1.rasp") + " --params " + q(dir / "k1.json");
    const auto g1 = run(dir, pair);
    ASSERT_EQ(g1.code, 0) << g1.err;
    EXPECT_EQ(run(dir, pair).out, g1.out);
    const auto doc = nlohmann::json::parse(g1.out);
    EXPECT_EQ(doc["query_id"], "unsafe-0003");
    EXPECT_EQ(doc["steered"], nlohmann::json::parse("[true,true,true]"));
}

TEST(Cli, SweepIsDeterministic) {
    const auto dir = ras::testing::temp_dir("cli_sweep");
    const std::string args = "sweep --gamma 0.1,0.5,0.9 --n 1,2 --n-safe 20 --n-unsafe 20 --n-calibration 10";
    const auto a = run(dir, args + " --out " + q(dir / "a.csv") + " --svg " + q(dir / "a.svg"));
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(run(dir, args + " --out " + q(dir / "b.csv")).code, 0);
    const auto csv = file_bytes(dir / "a.csv");
    EXPECT_EQ(csv, file_bytes(dir / "b.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
    EXPECT_TRUE(fs::exists(dir / "a.svg"));
}

TEST(Cli, AttentionHeatmap) {
    const auto dir = ras::testing::temp_dir("cli_attn");
    Gen g(5);
    ActivationTrace t;
    t.model_id = "m";
    t.query_id = "att";
    t.dim = 2;
    t.tokens.push_back({1, {0.5, 0.25}, {}, {}});
    t.attention = ras::testing::random_attention(g, 2, 2, 3, 6);
    io::write_trace(t, dir / "att.rast");
    const auto r = run(dir, "attn --trace " + q(dir / "att.rast") + " --top-heads 2 --layout 2x3 --out " + q(dir / "h"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto heads = nlohmann::json::parse(r.out);
    EXPECT_EQ(heads["heads"].size(), 2u);
    const auto values = attention::parse_heatmap_csv(file_bytes(dir / "h.csv"));
    const auto map = attention::effective_attention(*t.attention, std::nullopt, 2);
    ASSERT_EQ(values.size(), 6u);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(values[j], io::to_f32(map.weights[j]));
    EXPECT_TRUE(fs::exists(dir / "h.svg"));
    EXPECT_EQ(run(dir, "attn --trace " + q(dir / "att.rast") + " --layout 4x4").code, 1);
}

TEST(Cli, ToyExportAndGenerate) {
    const auto dir = ras::testing::temp_dir("cli_toy");
    const auto e = run(dir, "toy-export --out " + q(dir / "toy"));
    ASSERT_EQ(e.code, 0) << e.err;
    const auto t = dir / "toy";
    const std::string gen = "generate --toy-seed 0 --corpus " + q(t / "queries.json") + " --proto " +
                            q(t / "prototypes.rasp") + " --params " + q(t / "params.json") + " --no-timings";
    const auto g1 = run(dir, gen);
    ASSERT_EQ(g1.code, 0) << g1.err;
    EXPECT_EQ(run(dir, gen).out, g1.out);
    const auto doc = nlohmann::json::parse(g1.out);
    EXPECT_EQ(doc["results"].size(), 8u);
    EXPECT_EQ(doc["mode"], "adaptive");
    const auto f = run(dir, gen + " --mode appendixf --safe-means " + q(t / "safe_means.rasp"));
    EXPECT_EQ(f.code, 0) << f.err;
    EXPECT_EQ(run(dir, gen + " --mode appendixf").code, 2);
}
