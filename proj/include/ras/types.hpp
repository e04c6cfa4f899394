#pragma once

// Records shared across the pipeline: activation traces, the LM-head bundle,
// unsafe prototypes and the calibrated risk parameters.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ras/error.hpp"
#include "ras/numerics.hpp"

namespace ras {

enum class TraceRole : std::uint8_t { Original = 0, Reformulated = 1 };

inline const char* to_string(TraceRole role) {
    return role == TraceRole::Original ? "original" : "reformulated";
}

struct TokenRecord {
    std::uint32_t position = 0;  // 1-based
    Vector last_layer;
    std::optional<std::vector<Vector>> per_layer;  // when present, back() == last_layer
    std::optional<std::uint32_t> token_id;

    bool operator==(const TokenRecord&) const = default;
};

/// Attention paid by text-token queries to visual-token keys, for every
/// (layer, head). Weights are stored in (layer, head, visual j, text t)
/// row-major order; text_indices / visual_indices are sequence positions.
struct AttentionTensor {
    std::uint32_t layers = 0;
    std::uint32_t heads = 0;
    std::vector<std::uint32_t> text_indices;
    std::vector<std::uint32_t> visual_indices;
    std::vector<double> weights;

    std::size_t index(std::size_t l, std::size_t h, std::size_t j, std::size_t t) const {
        return ((l * heads + h) * visual_indices.size() + j) * text_indices.size() + t;
    }
    double at(std::size_t l, std::size_t h, std::size_t j, std::size_t t) const { return weights[index(l, h, j, t)]; }
    double& at(std::size_t l, std::size_t h, std::size_t j, std::size_t t) { return weights[index(l, h, j, t)]; }

    std::size_t expected_size() const {
        return static_cast<std::size_t>(layers) * heads * visual_indices.size() * text_indices.size();
    }

    void validate() const {
        if (weights.size() != expected_size()) {
            fail(ErrorKind::DimensionMismatch, "attention tensor: weight count does not match L*H*|Vis|*|T|");
        }
        for (double w : weights) {
            if (!(w >= 0.0 && w <= 1.0)) fail(ErrorKind::InvalidInput, "attention tensor: weight outside [0,1]");
        }
        for (std::size_t l = 0; l < layers; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t t = 0; t < text_indices.size(); ++t) {
                    double mass = 0.0;
                    for (std::size_t j = 0; j < visual_indices.size(); ++j) mass += at(l, h, j, t);
                    if (mass > 1.0 + 1e-6) {
                        fail(ErrorKind::InvalidInput, "attention tensor: visual mass exceeds 1 for a text query");
                    }
                }
    }

    bool operator==(const AttentionTensor&) const = default;
};

struct ActivationTrace {
    std::string model_id;
    std::string query_id;
    TraceRole role = TraceRole::Original;
    std::uint32_t dim = 0;
    std::vector<TokenRecord> tokens;
    std::optional<AttentionTensor> attention;

    void validate() const {
        require(dim > 0, ErrorKind::InvalidInput, "trace " + query_id + ": dimension must be positive");
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const auto& tok = tokens[i];
            require(tok.position == i + 1, ErrorKind::InvalidInput,
                    "trace " + query_id + ": token positions must be contiguous from 1");
            require(tok.last_layer.size() == dim, ErrorKind::DimensionMismatch,
                    "trace " + query_id + ": activation length differs from d");
            if (tok.per_layer) {
                require(!tok.per_layer->empty(), ErrorKind::InvalidInput,
                        "trace " + query_id + ": empty per-layer list");
                for (const auto& a : *tok.per_layer) {
                    require(a.size() == dim, ErrorKind::DimensionMismatch,
                            "trace " + query_id + ": per-layer activation length differs from d");
                }
                require(tok.per_layer->back() == tok.last_layer, ErrorKind::InvalidInput,
                        "trace " + query_id + ": last per-layer activation differs from last-layer activation");
            }
        }
        if (attention) attention->validate();
    }

    bool operator==(const ActivationTrace&) const = default;
};

/// Linear LM head (logits = W x + b) plus the vocabulary ids treated as refusals.
struct ModelBundle {
    std::string model_id;
    std::uint32_t dim = 0;
    std::uint32_t vocab = 0;
    Matrix weights;  // vocab x dim
    std::optional<Vector> bias;
    std::vector<std::uint32_t> refusal_token_ids;

    void validate() const {
        require(dim > 0 && vocab > 0, ErrorKind::InvalidInput, "bundle: d and V must be positive");
        require(weights.rows == vocab && weights.cols == dim, ErrorKind::DimensionMismatch,
                "bundle: weight matrix shape does not match V x d");
        if (bias) require(bias->size() == vocab, ErrorKind::DimensionMismatch, "bundle: bias length differs from V");
        for (auto id : refusal_token_ids) {
            require(id < vocab, ErrorKind::OutOfRange, "bundle: refusal token id " + std::to_string(id) + " >= V");
        }
    }

    Vector logits(std::span<const double> x) const {
        check_same_size(x.size(), dim, "lm head");
        Vector z = matvec(weights, x);
        if (bias) {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += (*bias)[i];
        }
        return z;
    }

    bool is_refusal(std::uint32_t token) const {
        for (auto id : refusal_token_ids)
            if (id == token) return true;
        return false;
    }

    bool operator==(const ModelBundle&) const = default;
};

/// Mean last-layer activation of unsafe queries at response positions 1..N.
struct PrototypeSet {
    std::string model_id;
    std::uint32_t dim = 0;
    std::vector<Vector> mu;  // mu[n-1] is the prototype for response position n
    std::uint32_t source_query_count = 0;

    std::size_t n_tokens() const { return mu.size(); }

    void validate() const {
        require(!mu.empty(), ErrorKind::InvalidInput, "prototypes: need at least one position");
        require(source_query_count >= 1, ErrorKind::InvalidInput, "prototypes: source_query_count must be >= 1");
        for (const auto& v : mu) {
            require(v.size() == dim, ErrorKind::DimensionMismatch, "prototypes: vector length differs from d");
        }
    }

    bool operator==(const PrototypeSet&) const = default;
};

struct RiskParams {
    double gamma = 0.3;
    std::uint32_t n_tokens = 3;
    double s_base = 0.0;
    double alpha = 1.0;
    double r_target = 0.99;

    void validate() const {
        require(gamma > 0.0 && gamma < 1.0, ErrorKind::InvalidConfig, "risk params: gamma must lie in (0,1)");
        require(n_tokens >= 1, ErrorKind::InvalidConfig, "risk params: n_tokens must be >= 1");
        require(s_base > -1.0 && s_base < 1.0, ErrorKind::InvalidConfig, "risk params: s_base must lie in (-1,1)");
        require(alpha > 0.0 && std::isfinite(alpha), ErrorKind::InvalidConfig, "risk params: alpha must be > 0");
        require(r_target > 0.5 && r_target < 1.0, ErrorKind::InvalidConfig,
                "risk params: r_target must lie in (0.5,1)");
    }

    bool operator==(const RiskParams&) const = default;
};

}  // namespace ras
