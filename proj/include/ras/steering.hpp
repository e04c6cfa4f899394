#pragma once

// Risk-adaptive activation steering and the three-stage generation pipeline:
//   1. reformulate the query (safety prompt + short visual context + query),
//   2. probe N tokens on the reformulated query and score them against the
//      unsafe prototypes,
//   3. decode the original query, moving the first N last-layer activations
//      toward the prototypes in proportion to the risk.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ras/error.hpp"
#include "ras/numerics.hpp"
#include "ras/prompts.hpp"
#include "ras/risk.hpp"
#include "ras/toy_model.hpp"
#include "ras/types.hpp"

namespace ras::steering {

using toy::GenerationResult;

enum class SteeringMode { Adaptive, Binary, AppendixF };

inline const char* to_string(SteeringMode m) {
    switch (m) {
        case SteeringMode::Adaptive: return "adaptive";
        case SteeringMode::Binary: return "binary";
        case SteeringMode::AppendixF: return "appendixf";
    }
    return "unknown";
}

inline SteeringMode parse_mode(std::string_view s) {
    if (s == "adaptive") return SteeringMode::Adaptive;
    if (s == "binary") return SteeringMode::Binary;
    if (s == "appendixf") return SteeringMode::AppendixF;
    fail(ErrorKind::Usage, "unknown steering mode '" + std::string(s) + "' (adaptive|binary|appendixf)");
}

/// v^n = mu_u^n - x^n
inline Vector refusal_vector(const PrototypeSet& proto, std::size_t n, std::span<const double> x) {
    if (n < 1 || n > proto.n_tokens()) {
        fail(ErrorKind::OutOfRange, "refusal_vector: position " + std::to_string(n) + " outside 1.." +
                                        std::to_string(proto.n_tokens()));
    }
    return subtract(proto.mu[n - 1], x);
}

/// x + r v with a single rounding per coordinate.
inline Vector steer(std::span<const double> x, std::span<const double> v, double r) {
    check_same_size(x.size(), v.size(), "steer");
    Vector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::fma(r, v[i], x[i]);
    return out;
}

/// (1 - r) x + r target: steer(x, target - x, r) rewritten so that r = 0 and
/// r = 1 reproduce x and target exactly.
inline Vector steer_toward(std::span<const double> x, std::span<const double> target, double r) {
    check_same_size(x.size(), target.size(), "steer_toward");
    Vector out(x.size());
    const double keep = 1.0 - r;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = keep * x[i] + r * target[i];
    return out;
}

/// Unit step replacing the sigmoid: 1 if s > s_base, else 0.
inline double binary_gate(double s, double s_base) { return s > s_base ? 1.0 : 0.0; }

/// Query-independent refusal direction mu_u^n - mu_s^n (difference of class means).
inline Vector appendixF_vector(std::span<const double> mu_u, std::span<const double> mu_s) {
    check_same_size(mu_u.size(), mu_s.size(), "appendixF_vector");
    return subtract(mu_u, mu_s);
}

/// Strength actually applied for a given mode.
inline double applied_strength(SteeringMode mode, const risk::RiskScore& score, const RiskParams& params) {
    return mode == SteeringMode::Binary ? binary_gate(score.s, params.s_base) : score.r;
}

/// Steers the first N response positions with the rule selected by `mode`.
class SteeringHook final : public toy::DecodeHook {
public:
    SteeringHook(const PrototypeSet& proto, double r, std::size_t n, SteeringMode mode,
                 const PrototypeSet* safe_means = nullptr, std::optional<std::size_t> layer = std::nullopt,
                 bool steer_cache = true)
        : proto_(proto), r_(r), n_(n), mode_(mode), safe_(safe_means), layer_(layer), steer_cache_(steer_cache) {
        require(r >= 0.0 && r <= 1.0, ErrorKind::InvalidInput, "steering hook: r must lie in [0,1]");
        require(n <= proto.n_tokens(), ErrorKind::InvalidConfig,
                "steering hook: N=" + std::to_string(n) + " exceeds prototype positions " +
                    std::to_string(proto.n_tokens()));
        if (mode == SteeringMode::AppendixF) {
            require(safe_ != nullptr, ErrorKind::InvalidConfig, "steering hook: appendixf mode needs safe-query means");
            require(safe_->dim == proto.dim && safe_->n_tokens() >= n, ErrorKind::DimensionMismatch,
                    "steering hook: safe-query means do not match the prototypes");
        }
    }

    std::size_t positions() const override { return n_; }
    std::optional<std::size_t> layer() const override { return layer_; }
    bool steer_cache() const override { return steer_cache_; }
    std::size_t dim() const override { return proto_.dim; }
    double strength() const override { return r_; }

    Vector apply(std::size_t n, std::span<const double> x) const override {
        if (mode_ == SteeringMode::AppendixF) {
            return steer(x, appendixF_vector(proto_.mu.at(n - 1), safe_->mu.at(n - 1)), r_);
        }
        check_same_size(x.size(), proto_.dim, "steering hook input");
        return steer_toward(x, proto_.mu.at(n - 1), r_);
    }

private:
    const PrototypeSet& proto_;
    double r_;
    std::size_t n_;
    SteeringMode mode_;
    const PrototypeSet* safe_;
    std::optional<std::size_t> layer_;
    bool steer_cache_;
};

enum class CaptionSource { CorpusSupplied, ToyCaptionStub };

struct Query {
    std::string id;
    std::vector<std::uint32_t> visual;
    std::string text;
    std::optional<std::string> caption;
};

struct PipelineConfig {
    std::string safety_prompt = std::string(prompts::kSafetyPrompt);
    CaptionSource caption_source = CaptionSource::ToyCaptionStub;
    RiskParams params;
    const PrototypeSet* prototypes = nullptr;
    SteeringMode mode = SteeringMode::Adaptive;
    const PrototypeSet* safe_means = nullptr;  // appendixf mode only
    std::size_t max_new = 16;
    std::optional<std::size_t> steer_layer;     // nullopt: last layer
    bool steer_cache = true;
    toy::DecodeOptions decode_options{};
};

inline std::string caption_for(const Query& q, CaptionSource source) {
    if (source == CaptionSource::CorpusSupplied) {
        if (!q.caption || q.caption->empty()) fail(ErrorKind::InvalidInput, "query " + q.id + ": missing caption");
        return *q.caption;
    }
    return toy::caption_stub(q.visual);
}

/// Safety prompt, visual context and the original query, in that order.
inline std::string reformulate(std::string_view safety_prompt, std::string_view caption, std::string_view query) {
    std::string out;
    out.reserve(safety_prompt.size() + caption.size() + query.size() + 2);
    out.append(safety_prompt).append(" ").append(caption).append(" ").append(query);
    return out;
}

inline void check_pipeline(const PipelineConfig& config, std::size_t model_dim) {
    config.params.validate();
    require(config.prototypes != nullptr, ErrorKind::InvalidConfig, "pipeline: prototypes not loaded");
    const auto& proto = *config.prototypes;
    require(proto.dim == model_dim, ErrorKind::DimensionMismatch,
            "pipeline: prototype d=" + std::to_string(proto.dim) + " differs from model d=" + std::to_string(model_dim));
    require(proto.n_tokens() >= config.params.n_tokens, ErrorKind::DimensionMismatch,
            "pipeline: prototypes cover " + std::to_string(proto.n_tokens()) + " positions, params need " +
                std::to_string(config.params.n_tokens));
    require(config.max_new >= 1, ErrorKind::InvalidConfig, "pipeline: max_new must be >= 1");
}

/// Full three-stage pipeline on the toy model.
inline GenerationResult ras_generate(const toy::ToyModel& model, const Query& query, const PipelineConfig& config) {
    using Clock = std::chrono::steady_clock;
    check_pipeline(config, model.config().dim);
    const auto& params = config.params;
    const auto bundle = model.bundle();

    // Stage 1 + 2: probe the reformulated query.
    const auto t0 = Clock::now();
    const std::string caption = caption_for(query, config.caption_source);
    const auto reformulated = toy::encode_text(reformulate(config.safety_prompt, caption, query.text));
    const auto probe = model.greedy_decode(query.visual, reformulated, params.n_tokens, nullptr,
                                           {.record_activations = true, .record_logits = false});
    if (probe.activations.empty()) fail(ErrorKind::InsufficientData, "pipeline: probe produced no tokens");
    const std::size_t m = std::min<std::size_t>(probe.activations.size(), params.n_tokens);
    const std::vector<Vector> mus(config.prototypes->mu.begin(),
                                  config.prototypes->mu.begin() + static_cast<std::ptrdiff_t>(m));
    const double s = risk::similarity(risk::output_distributions(probe.activations, bundle),
                                      risk::output_distributions(mus, bundle), params.gamma);
    const auto score = risk::risk(s, params);
    const double r = applied_strength(config.mode, score, params);
    const double probe_us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();

    // Stage 3: steered decode of the original query.
    const SteeringHook hook(*config.prototypes, r, params.n_tokens, config.mode, config.safe_means, config.steer_layer,
                            config.steer_cache);
    auto result = model.greedy_decode(query.visual, toy::encode_text(query.text), config.max_new, &hook,
                                      config.decode_options);
    result.query_id = query.id;
    result.similarity = score.s;
    result.risk = score.r;
    result.probe_us = probe_us;
    return result;
}

/// Pipeline arithmetic on pre-recorded activations: score the reformulated
/// trace, then steer the original trace's first N activations and recompute
/// their logits through the bundle. Emitted tokens are the argmax of the
/// (steered) logits at every recorded position.
inline GenerationResult ras_generate_traces(const ActivationTrace& original, const ActivationTrace& reformulated,
                                            const ModelBundle& bundle, const PrototypeSet& proto,
                                            const RiskParams& params, SteeringMode mode = SteeringMode::Adaptive,
                                            const PrototypeSet* safe_means = nullptr, bool record_logits = true) {
    params.validate();
    if (reformulated.tokens.empty()) fail(ErrorKind::InsufficientData, "pipeline: probe shorter than 1 token");
    require(original.dim == bundle.dim && proto.dim == bundle.dim, ErrorKind::DimensionMismatch,
            "pipeline: trace/prototype/bundle dimensions disagree");
    require(proto.n_tokens() >= params.n_tokens, ErrorKind::DimensionMismatch,
            "pipeline: prototypes cover fewer positions than params.n_tokens");

    const auto score = risk::risk(risk::trace_similarity(reformulated, proto, bundle, params.gamma, params.n_tokens),
                                  params);
    const double r = applied_strength(mode, score, params);
    const SteeringHook hook(proto, r, params.n_tokens, mode, safe_means);

    GenerationResult out;
    out.query_id = original.query_id;
    out.similarity = score.s;
    out.risk = score.r;
    for (std::size_t i = 0; i < original.tokens.size(); ++i) {
        const std::size_t n = i + 1;
        const auto& x = original.tokens[i].last_layer;
        const bool active = n <= hook.positions();
        Vector z = active ? bundle.logits(hook.apply(n, x)) : bundle.logits(x);
        out.tokens.push_back(static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin()));
        out.steered.push_back(active);
        out.applied_r.push_back(active ? r : 0.0);
        if (record_logits) out.logits.push_back(std::move(z));
    }
    return out;
}

inline nlohmann::ordered_json to_json(const GenerationResult& g, bool include_timings = true,
                                      bool include_logits = false) {
    nlohmann::ordered_json j;
    j["query_id"] = g.query_id;
    j["tokens"] = g.tokens;
    j["steered"] = g.steered;
    j["applied_r"] = g.applied_r;
    j["s"] = g.similarity;
    j["r"] = g.risk;
    if (include_logits) j["logits"] = g.logits;
    if (include_timings) {
        j["timings"] = {{"probe_us", g.probe_us}, {"decode_us", g.decode_us}, {"token_us", g.token_us}};
    }
    return j;
}

}  // namespace ras::steering
