// ras: command-line front end for the risk-adaptive steering pipeline.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ras/attention.hpp"
#include "ras/error.hpp"
#include "ras/fdr.hpp"
#include "ras/harness.hpp"
#include "ras/risk.hpp"
#include "ras/steering.hpp"
#include "ras/toy_model.hpp"
#include "ras/trace_io.hpp"

#ifndef RAS_ASSET_DIR
#define RAS_ASSET_DIR "assets"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kFormat = 3, kNumeric = 4 };

int exit_code_for(ras::ErrorKind kind) {
    switch (kind) {
        case ras::ErrorKind::Usage:
        case ras::ErrorKind::InvalidConfig: return kUsage;
        case ras::ErrorKind::Format: return kFormat;
        case ras::ErrorKind::SingularMatrix:
        case ras::ErrorKind::Degenerate: return kNumeric;
        default: return kFailure;
    }
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

void emit(const std::string& text, const std::optional<std::string>& out) {
    if (out) {
        ras::io::write_text(*out, text);
    } else {
        std::cout << text;
    }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Whitespace/comma separated numbers, or a JSON array.
std::vector<double> read_scores(const fs::path& path) {
    const std::string text = ras::io::read_text(path);
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<double> values;
    if (first != std::string::npos && text[first] == '[') {
        for (const auto& v : json::parse(text)) {
            if (!v.is_number()) ras::fail(ras::ErrorKind::Format, path.string() + ": non-numeric score");
            values.push_back(v.get<double>());
        }
        return values;
    }
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) ras::fail(ras::ErrorKind::Format, path.string() + ": bad score '" + tok + "'");
        values.push_back(v);
    }
    return values;
}

std::vector<ras::steering::Query> read_queries(const fs::path& path) {
    const json doc = json::parse(ras::io::read_text(path));
    const json& list = doc.is_object() && doc.contains("queries") ? doc["queries"] : doc;
    if (!list.is_array()) ras::fail(ras::ErrorKind::Format, path.string() + ": expected an array of queries");
    std::vector<ras::steering::Query> queries;
    for (const auto& q : list) {
        if (!q.is_object() || !q.contains("text") || !q["text"].is_string()) {
            ras::fail(ras::ErrorKind::Format, path.string() + ": each query needs a string 'text'");
        }
        ras::steering::Query query;
        query.id = q.value("id", "q" + std::to_string(queries.size()));
        query.text = q["text"].get<std::string>();
        if (q.contains("visual")) query.visual = q["visual"].get<std::vector<std::uint32_t>>();
        if (q.contains("caption") && q["caption"].is_string()) query.caption = q["caption"].get<std::string>();
        queries.push_back(std::move(query));
    }
    return queries;
}

json queries_json(const std::vector<ras::steering::Query>& queries) {
    json list = json::array();
    for (const auto& q : queries) {
        json j;
        j["id"] = q.id;
        j["visual"] = q.visual;
        j["text"] = q.text;
        if (q.caption) j["caption"] = *q.caption;
        list.push_back(j);
    }
    return list;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok) {
        std::istringstream cell(tok);
        T v{};
        if (!(cell >> v) || !cell.eof()) ras::fail(ras::ErrorKind::Usage, std::string("bad ") + what + " '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) ras::fail(ras::ErrorKind::Usage, std::string("empty ") + what + " list");
    return out;
}

ras::toy::ToyModel toy_model(std::uint64_t seed) {
    ras::toy::ToyModelConfig config;
    config.seed = seed;
    return ras::toy::ToyModel::build(config);
}

std::pair<std::size_t, std::size_t> parse_layer_range(const std::string& text, std::size_t available) {
    if (text.empty()) return {1, available};
    const auto colon = text.find(':');
    try {
        if (colon == std::string::npos) {
            const auto l = static_cast<std::size_t>(std::stoul(text));
            return {l, l};
        }
        return {static_cast<std::size_t>(std::stoul(text.substr(0, colon))),
                static_cast<std::size_t>(std::stoul(text.substr(colon + 1)))};
    } catch (const std::exception&) {
        ras::fail(ras::ErrorKind::Usage, "layers must look like A:B or L, got '" + text + "'");
    }
}

// ---------------------------------------------------------------------------

struct BuildPrototypesArgs {
    std::string traces, out;
    std::uint32_t n_tokens = ras::risk::kDefaultTokens;
};

void cmd_build_prototypes(const BuildPrototypesArgs& a) {
    const auto traces = ras::io::read_trace_dir(a.traces);
    if (traces.empty()) ras::fail(ras::ErrorKind::InsufficientData, "no .rast files in " + a.traces);
    const auto proto = ras::risk::build_prototypes(traces, a.n_tokens);
    ras::io::write_prototypes(proto, a.out);
    std::cout << "wrote " << a.out << " (N=" << proto.n_tokens() << ", d=" << proto.dim
              << ", queries=" << proto.source_query_count << ")\n";
}

struct CalibrateArgs {
    std::optional<std::string> scores, traces, proto, bundle;
    std::string out;
    double r_target = ras::risk::kDefaultRiskTarget;
    double gamma = ras::risk::kDefaultGamma;
    std::uint32_t n_tokens = ras::risk::kDefaultTokens;
};

void cmd_calibrate(const CalibrateArgs& a) {
    std::vector<double> s;
    if (a.scores) {
        if (a.traces) ras::fail(ras::ErrorKind::Usage, "give either --scores or --traces, not both");
        s = read_scores(*a.scores);
    } else {
        if (!a.traces || !a.proto || !a.bundle) {
            ras::fail(ras::ErrorKind::Usage, "calibrate needs --scores FILE or --traces DIR --proto FILE --bundle FILE");
        }
        const auto bundle = ras::io::read_bundle(*a.bundle);
        const auto proto = ras::io::read_prototypes(*a.proto, bundle.dim);
        const auto traces = ras::io::read_trace_dir(*a.traces);
        s.resize(traces.size());
        ras::parallel_for(traces.size(), [&](std::size_t i) {
            s[i] = ras::risk::trace_similarity(traces[i], proto, bundle, a.gamma, a.n_tokens);
        });
    }
    const auto params = ras::risk::make_params(ras::risk::calibrate(s, a.r_target), a.gamma, a.n_tokens, a.r_target);
    ras::io::write_params(params, a.out);
    std::cout << "wrote " << a.out << " (s_base=" << params.s_base << ", alpha=" << params.alpha << ", samples=" << s.size()
              << ")\n";
}

struct ScoreArgs {
    std::optional<std::string> trace, traces, out;
    std::string proto, bundle, params;
};

json score_json(const ras::ActivationTrace& t, const ras::risk::RiskScore& sc) {
    json j;
    j["query_id"] = t.query_id;
    j["role"] = ras::to_string(t.role);
    j["s"] = sc.s;
    j["r"] = sc.r;
    return j;
}

void cmd_score(const ScoreArgs& a) {
    if (a.trace.has_value() == a.traces.has_value()) ras::fail(ras::ErrorKind::Usage, "give exactly one of --trace or --traces");
    const auto bundle = ras::io::read_bundle(a.bundle);
    const auto proto = ras::io::read_prototypes(a.proto, bundle.dim);
    const auto params = ras::io::read_params(a.params);
    if (a.trace) {
        const auto t = ras::io::read_trace(*a.trace);
        emit(dump(score_json(t, ras::risk::score_trace(t, proto, bundle, params, &std::cerr))), a.out);
        return;
    }
    const auto traces = ras::io::read_trace_dir(*a.traces);
    const auto scores = ras::risk::score_traces(traces, proto, bundle, params, &std::cerr);
    json list = json::array();
    for (std::size_t i = 0; i < traces.size(); ++i) list.push_back(score_json(traces[i], scores[i]));
    emit(dump(list), a.out);
}

struct GenerateArgs {
    std::optional<std::uint64_t> toy_seed;
    std::optional<std::string> corpus, original, reformulated, bundle, safe_means, out;
    std::string proto, params, mode = "adaptive", caption = "stub";
    std::string safety_prompt = std::string(ras::prompts::kSafetyPrompt);
    std::size_t max_new = 16;
    std::optional<std::size_t> steer_layer;
    bool no_cache_steer = false;
    bool no_timings = false;
    bool logits = false;
};

void cmd_generate(const GenerateArgs& a) {
    const auto mode = ras::steering::parse_mode(a.mode);
    const auto params = ras::io::read_params(a.params);
    std::optional<ras::PrototypeSet> safe_means;

    if (a.original || a.reformulated) {
        // Trace-pair mode: pipeline arithmetic on recorded activations.
        if (a.toy_seed || a.corpus) ras::fail(ras::ErrorKind::Usage, "trace-pair mode does not take --toy-seed/--corpus");
        if (!a.original || !a.reformulated || !a.bundle) {
            ras::fail(ras::ErrorKind::Usage, "trace-pair mode needs --original, --reformulated and --bundle");
        }
        const auto bundle = ras::io::read_bundle(*a.bundle);
        const auto proto = ras::io::read_prototypes(a.proto, bundle.dim);
        if (a.safe_means) safe_means = ras::io::read_prototypes(*a.safe_means, bundle.dim);
        const auto g = ras::steering::ras_generate_traces(ras::io::read_trace(*a.original),
                                                          ras::io::read_trace(*a.reformulated), bundle, proto, params,
                                                          mode, safe_means ? &*safe_means : nullptr, true);
        emit(dump(ras::steering::to_json(g, false, true)), a.out);
        return;
    }

    if (!a.toy_seed || !a.corpus) ras::fail(ras::ErrorKind::Usage, "generate needs --toy-seed and --corpus (or a trace pair)");
    const auto model = toy_model(*a.toy_seed);
    const auto proto = ras::io::read_prototypes(a.proto, model.config().dim);
    if (a.safe_means) safe_means = ras::io::read_prototypes(*a.safe_means, model.config().dim);
    const auto queries = read_queries(*a.corpus);

    ras::steering::PipelineConfig config;
    config.safety_prompt = a.safety_prompt;
    if (a.caption == "corpus") {
        config.caption_source = ras::steering::CaptionSource::CorpusSupplied;
    } else if (a.caption != "stub") {
        ras::fail(ras::ErrorKind::Usage, "--caption must be corpus or stub");
    }
    config.params = params;
    config.prototypes = &proto;
    config.mode = mode;
    config.safe_means = safe_means ? &*safe_means : nullptr;
    config.max_new = a.max_new;
    config.steer_layer = a.steer_layer;
    config.steer_cache = !a.no_cache_steer;
    config.decode_options.record_logits = a.logits;
    config.decode_options.record_activations = false;

    std::vector<ras::toy::GenerationResult> results(queries.size());
    ras::parallel_for(queries.size(),
                      [&](std::size_t i) { results[i] = ras::steering::ras_generate(model, queries[i], config); });
    json list = json::array();
    for (const auto& g : results) list.push_back(ras::steering::to_json(g, !a.no_timings, a.logits));
    json doc;
    doc["model_id"] = model.model_id();
    doc["mode"] = ras::steering::to_string(mode);
    doc["asr_proxy"] = ras::harness::asr_proxy(results, model.bundle(), params.n_tokens);
    doc["results"] = list;
    emit(dump(doc), a.out);
}

struct FdrArgs {
    std::string safe, unsafe, layers;
    std::optional<std::string> out, svg;
    double epsilon_scale = 1e-5, epsilon_floor = 1e-8;
};

void cmd_fdr(const FdrArgs& a) {
    const auto safe = ras::io::read_trace_dir(a.safe);
    const auto unsafe = ras::io::read_trace_dir(a.unsafe);
    if (safe.empty() || unsafe.empty()) ras::fail(ras::ErrorKind::InsufficientData, "fdr: empty trace directory");
    const auto [first, last] = parse_layer_range(a.layers, ras::fdr::layer_count(safe.front()));
    const auto report = ras::fdr::fdr_report(safe, unsafe, first, last, {a.epsilon_scale, a.epsilon_floor});
    emit(report.to_csv(), a.out);
    if (a.svg) {
        ras::harness::Series s{"FDR", {}, {}};
        for (const auto& l : report.layers) {
            s.x.push_back(l.layer);
            s.y.push_back(l.fdr);
        }
        ras::io::write_text(*a.svg, ras::harness::line_svg(std::span(&s, 1), "layer", "FDR"));
    }
}

struct AttnArgs {
    std::string trace, layout, out;
    std::optional<std::string> text;
    std::size_t top_heads = ras::attention::kDefaultTopHeads;
};

void cmd_attn(const AttnArgs& a) {
    const auto layout = ras::attention::parse_layout(a.layout);
    const auto trace = ras::io::read_trace(a.trace);
    if (!trace.attention) ras::fail(ras::ErrorKind::InvalidInput, "trace " + trace.query_id + " carries no attention tensor");
    ras::attention::TextSet text;
    if (a.text) text = parse_list<std::size_t>(*a.text, "text index");
    const auto map = ras::attention::effective_attention(*trace.attention, text, a.top_heads);
    ras::attention::export_heatmap(map, layout, a.out);
    json heads = json::array();
    for (const auto& h : map.heads) heads.push_back({{"layer", h.layer}, {"head", h.head}, {"strength", h.strength}});
    json doc;
    doc["query_id"] = trace.query_id;
    doc["heads"] = heads;
    doc["csv"] = a.out + ".csv";
    doc["svg"] = a.out + ".svg";
    std::cout << dump(doc);
}

void add_corpus_flags(CLI::App* cmd, ras::harness::SyntheticCorpusSpec& spec) {
    cmd->add_option("--dim", spec.dim, "activation dimension")->capture_default_str();
    cmd->add_option("--vocab", spec.vocab, "vocabulary size")->capture_default_str();
    cmd->add_option("--n-safe", spec.n_safe, "safe queries")->capture_default_str();
    cmd->add_option("--n-unsafe", spec.n_unsafe, "unsafe queries")->capture_default_str();
    cmd->add_option("--n-calibration", spec.n_calibration, "calibration queries")->capture_default_str();
    cmd->add_option("--separation", spec.separation, "Mahalanobis distance between class means")->capture_default_str();
    cmd->add_option("--seed", spec.seed, "corpus seed")->capture_default_str();
}

struct SweepArgs {
    std::string gammas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    std::string ns = "1,2,3,4,5,6";
    double r_target = ras::risk::kDefaultRiskTarget;
    std::optional<std::string> out, svg;
    ras::harness::SyntheticCorpusSpec spec;
};

void cmd_sweep(SweepArgs a) {
    const auto gammas = parse_list<double>(a.gammas, "gamma");
    const auto ns = parse_list<std::uint32_t>(a.ns, "N");
    a.spec.tokens_per_query = *std::max_element(ns.begin(), ns.end());
    const auto corpus = ras::harness::gen_corpus(a.spec);
    const auto rows = ras::harness::sweep(corpus, gammas, ns, a.r_target);
    emit(ras::harness::sweep_csv(rows), a.out);
    if (a.svg) ras::io::write_text(*a.svg, ras::harness::sweep_svg(rows));
}

struct BenchArgs {
    std::size_t tokens = 1000;
    std::size_t reps = 5;
    std::uint64_t toy_seed = 0;
    std::string assets = RAS_ASSET_DIR;
    std::optional<std::string> out;
};

void cmd_bench(const BenchArgs& a) {
    const auto model = toy_model(a.toy_seed);
    const auto unsafe = ras::harness::load_lines(fs::path(a.assets) / "unsafe_text_queries.txt");
    const auto benign = ras::harness::load_lines(fs::path(a.assets) / "benign_text_queries.txt");
    const auto art = ras::harness::prepare_toy(model, unsafe, benign);
    ras::steering::PipelineConfig config;
    config.params = art.params;
    config.prototypes = &art.prototypes;
    const ras::steering::Query query{"bench", ras::harness::synthetic_visual_tokens(1, 16, model.config().vocab),
                                     unsafe.front(), std::nullopt};
    const auto rep = ras::harness::bench(model, query, config, a.tokens, a.reps);
    json j;
    j["tokens"] = rep.tokens;
    j["repetitions"] = rep.repetitions;
    j["unsteered_tokens_per_second"] = rep.unsteered_tokens_per_second;
    j["steered_tokens_per_second"] = rep.steered_tokens_per_second;
    j["relative_throughput"] = rep.relative_throughput;
    j["s"] = rep.similarity;
    j["r"] = rep.risk;
    emit(dump(j), a.out);
}

struct GenCorpusArgs {
    std::string out;
    ras::harness::SyntheticCorpusSpec spec;
};

void cmd_gen_corpus(const GenCorpusArgs& a) {
    const auto corpus = ras::harness::gen_corpus(a.spec);
    ras::harness::write_corpus(corpus, a.out);
    std::cout << "wrote corpus to " << a.out << " (" << corpus.safe.size() << " safe, " << corpus.unsafe.size()
              << " unsafe, " << corpus.calibration.size() << " calibration pairs)\n";
}

struct ToyExportArgs {
    std::uint64_t toy_seed = 0;
    std::string out;
    std::string assets = RAS_ASSET_DIR;
    double gamma = ras::risk::kDefaultGamma;
    std::uint32_t n_tokens = ras::risk::kDefaultTokens;
    double r_target = ras::risk::kDefaultRiskTarget;
};

/// Prototypes, safe means, params, bundle, a query corpus and one trace with
/// attention for the toy model: everything the other commands consume.
void cmd_toy_export(const ToyExportArgs& a) {
    const auto model = toy_model(a.toy_seed);
    const auto unsafe = ras::harness::load_lines(fs::path(a.assets) / "unsafe_text_queries.txt");
    const auto benign = ras::harness::load_lines(fs::path(a.assets) / "benign_text_queries.txt");
    const auto art = ras::harness::prepare_toy(model, unsafe, benign, a.gamma, a.n_tokens, a.r_target);
    const fs::path dir(a.out);
    fs::create_directories(dir);
    ras::io::write_bundle(model.bundle(), dir / "bundle.rasb");
    ras::io::write_prototypes(art.prototypes, dir / "prototypes.rasp");
    ras::io::write_prototypes(art.safe_means, dir / "safe_means.rasp");
    ras::io::write_params(art.params, dir / "params.json");

    std::vector<ras::steering::Query> queries;
    const auto vocab = model.config().vocab;
    for (std::size_t i = 0; i < 4; ++i) {
        queries.push_back({"unsafe-" + std::to_string(i), ras::harness::synthetic_visual_tokens(2000 + i, 16, vocab),
                           unsafe[i % unsafe.size()], std::nullopt});
    }
    for (std::size_t i = 0; i < 4; ++i) {
        queries.push_back({"benign-" + std::to_string(i), ras::harness::synthetic_visual_tokens(3000 + i, 16, vocab),
                           benign[i % benign.size()], std::nullopt});
    }
    ras::io::write_text(dir / "queries.json", dump(queries_json(queries)));

    const auto& q = queries.front();
    const auto fwd = model.forward(q.visual, ras::toy::encode_text(q.text));
    ras::io::write_trace(fwd.to_trace(model.model_id(), q.id, ras::TraceRole::Original, true, true),
                         dir / "attention_trace.rast");
    std::cout << "wrote toy artifacts to " << dir.string() << " (s_base=" << art.params.s_base
              << ", alpha=" << art.params.alpha << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ras: risk-adaptive activation steering toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ras 1.0.0");

    BuildPrototypesArgs bp;
    auto* c_bp = app.add_subcommand("build-prototypes", "average refusing traces into unsafe prototypes");
    c_bp->add_option("--traces", bp.traces, "directory of .rast traces")->required();
    c_bp->add_option("--n-tokens", bp.n_tokens, "response positions N")->capture_default_str();
    c_bp->add_option("--out", bp.out, "prototype file")->required();

    CalibrateArgs cal;
    auto* c_cal = app.add_subcommand("calibrate", "fit S_base and alpha");
    c_cal->add_option("--scores", cal.scores, "file of similarity values");
    c_cal->add_option("--traces", cal.traces, "directory of reformulated calibration traces");
    c_cal->add_option("--proto", cal.proto, "prototype file");
    c_cal->add_option("--bundle", cal.bundle, "LM-head bundle");
    c_cal->add_option("--r-target", cal.r_target, "risk at s = 1")->capture_default_str();
    c_cal->add_option("--gamma", cal.gamma, "decay factor")->capture_default_str();
    c_cal->add_option("--n-tokens", cal.n_tokens, "response positions N")->capture_default_str();
    c_cal->add_option("--out", cal.out, "params JSON")->required();

    ScoreArgs sc;
    auto* c_sc = app.add_subcommand("score", "risk of reformulated-query traces");
    c_sc->add_option("--trace", sc.trace, "trace file");
    c_sc->add_option("--traces", sc.traces, "directory of traces");
    c_sc->add_option("--proto", sc.proto, "prototype file")->required();
    c_sc->add_option("--bundle", sc.bundle, "LM-head bundle")->required();
    c_sc->add_option("--params", sc.params, "params JSON")->required();
    c_sc->add_option("--out", sc.out, "write JSON here instead of stdout");

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "run the three-stage pipeline");
    c_gen->add_option("--toy-seed", gen.toy_seed, "toy model seed");
    c_gen->add_option("--corpus", gen.corpus, "query JSON");
    c_gen->add_option("--original", gen.original, "trace-pair mode: original-query trace");
    c_gen->add_option("--reformulated", gen.reformulated, "trace-pair mode: reformulated-query trace");
    c_gen->add_option("--bundle", gen.bundle, "trace-pair mode: LM-head bundle");
    c_gen->add_option("--proto", gen.proto, "prototype file")->required();
    c_gen->add_option("--params", gen.params, "params JSON")->required();
    c_gen->add_option("--mode", gen.mode, "adaptive|binary|appendixf")->capture_default_str();
    c_gen->add_option("--safe-means", gen.safe_means, "safe-query means (appendixf mode)");
    c_gen->add_option("--caption", gen.caption, "corpus|stub")->capture_default_str();
    c_gen->add_option("--safety-prompt", gen.safety_prompt, "safety prompt text");
    c_gen->add_option("--max-new", gen.max_new, "tokens to decode")->capture_default_str();
    c_gen->add_option("--steer-layer", gen.steer_layer, "0-based layer to steer (default: last)");
    c_gen->add_flag("--no-cache-steer", gen.no_cache_steer, "keep steered states out of the KV cache");
    c_gen->add_flag("--no-timings", gen.no_timings, "omit wall-clock timings");
    c_gen->add_flag("--logits", gen.logits, "include per-position logits");
    c_gen->add_option("--out", gen.out, "write JSON here instead of stdout");

    FdrArgs fd;
    auto* c_fd = app.add_subcommand("fdr", "per-layer Fisher discriminant ratio");
    c_fd->add_option("--safe", fd.safe, "directory of safe traces")->required();
    c_fd->add_option("--unsafe", fd.unsafe, "directory of unsafe traces")->required();
    c_fd->add_option("--epsilon-scale", fd.epsilon_scale, "ridge relative to mean variance")->capture_default_str();
    c_fd->add_option("--epsilon-floor", fd.epsilon_floor, "absolute ridge floor")->capture_default_str();
    c_fd->add_option("--layers", fd.layers, "1-based range A:B (default: all)");
    c_fd->add_option("--out", fd.out, "write CSV here instead of stdout");
    c_fd->add_option("--svg", fd.svg, "line chart of FDR per layer");

    AttnArgs at;
    auto* c_at = app.add_subcommand("attn", "effective cross-modal attention heatmap");
    c_at->add_option("--trace", at.trace, "trace with an attention tensor")->required();
    c_at->add_option("--top-heads", at.top_heads, "heads to average")->capture_default_str();
    c_at->add_option("--layout", at.layout, "visual grid RxC")->required();
    c_at->add_option("--text", at.text, "text-set indices (default: all)");
    c_at->add_option("--out", at.out, "output prefix for .csv and .svg")->default_val("heatmap");

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("sweep", "gamma/N grid on the synthetic corpus");
    c_sw->add_option("--gamma", sw.gammas, "comma-separated gammas")->capture_default_str();
    c_sw->add_option("--n", sw.ns, "comma-separated N values")->capture_default_str();
    c_sw->add_option("--r-target", sw.r_target, "risk at s = 1")->capture_default_str();
    c_sw->add_option("--out", sw.out, "write CSV here instead of stdout");
    c_sw->add_option("--svg", sw.svg, "line chart of unsafe mean risk");
    add_corpus_flags(c_sw, sw.spec);

    BenchArgs bn;
    auto* c_bn = app.add_subcommand("bench", "steered vs unsteered decode throughput");
    c_bn->add_option("--tokens", bn.tokens, "tokens per decode")->capture_default_str();
    c_bn->add_option("--reps", bn.reps, "repetitions (best counts)")->capture_default_str();
    c_bn->add_option("--toy-seed", bn.toy_seed, "toy model seed")->capture_default_str();
    c_bn->add_option("--assets", bn.assets, "directory with the query lists")->capture_default_str();
    c_bn->add_option("--out", bn.out, "write JSON here instead of stdout");

    GenCorpusArgs gc;
    auto* c_gc = app.add_subcommand("gen-corpus", "write a synthetic trace corpus");
    c_gc->add_option("--out", gc.out, "output directory")->required();
    c_gc->add_option("--tokens", gc.spec.tokens_per_query, "positions per trace")->capture_default_str();
    add_corpus_flags(c_gc, gc.spec);

    ToyExportArgs te;
    auto* c_te = app.add_subcommand("toy-export", "prepare toy-model prototypes, params and queries");
    c_te->add_option("--toy-seed", te.toy_seed, "toy model seed")->capture_default_str();
    c_te->add_option("--out", te.out, "output directory")->required();
    c_te->add_option("--assets", te.assets, "directory with the query lists")->capture_default_str();
    c_te->add_option("--gamma", te.gamma, "decay factor")->capture_default_str();
    c_te->add_option("--n-tokens", te.n_tokens, "response positions N")->capture_default_str();
    c_te->add_option("--r-target", te.r_target, "risk at s = 1")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "ras: error[usage]: " << one_line(e.what()) << "\n";
        return kUsage;
    }

    try {
        if (c_bp->parsed()) cmd_build_prototypes(bp);
        else if (c_cal->parsed()) cmd_calibrate(cal);
        else if (c_sc->parsed()) cmd_score(sc);
        else if (c_gen->parsed()) cmd_generate(gen);
        else if (c_fd->parsed()) cmd_fdr(fd);
        else if (c_at->parsed()) cmd_attn(at);
        else if (c_sw->parsed()) cmd_sweep(sw);
        else if (c_bn->parsed()) cmd_bench(bn);
        else if (c_gc->parsed()) cmd_gen_corpus(gc);
        else if (c_te->parsed()) cmd_toy_export(te);
    } catch (const ras::Error& e) {
        std::cerr << "ras: error[" << ras::to_string(e.kind()) << "]: " << one_line(e.what()) << "\n";
        return exit_code_for(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "ras: error[format]: " << one_line(e.what()) << "\n";
        return kFormat;
    } catch (const std::exception& e) {
        std::cerr << "ras: error[internal]: " << one_line(e.what()) << "\n";
        return kFailure;
    }
    return kOk;
}
