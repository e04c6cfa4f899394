#pragma once

// Fisher Discriminant Ratio between two activation populations:
//
//   FDR = dmu^T (Sigma_safe + Sigma_unsafe + eps I)^-1 dmu,   dmu = mu_safe - mu_unsafe
//
// eps is scale-aware: max(epsilon_floor, epsilon_scale * tr(Sigma_safe + Sigma_unsafe) / d),
// because with d >> samples the pooled covariance is rank deficient and an
// absolute eps would behave differently at every activation scale.

#include <charconv>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ras/error.hpp"
#include "ras/numerics.hpp"
#include "ras/parallel.hpp"
#include "ras/types.hpp"

namespace ras::fdr {

struct FdrConfig {
    double epsilon_scale = 1e-5;
    double epsilon_floor = 1e-8;

    void validate() const {
        require(epsilon_scale > 0.0 && epsilon_floor > 0.0, ErrorKind::InvalidConfig,
                "fdr: epsilon_scale and epsilon_floor must be positive");
    }
};

struct FdrValue {
    double value = 0.0;
    double epsilon = 0.0;
};

inline FdrValue fdr_detail(std::span<const Vector> safe, std::span<const Vector> unsafe, const FdrConfig& config = {},
                           const std::string& context = "fdr") {
    config.validate();
    if (safe.size() < 2 || unsafe.size() < 2) {
        fail(ErrorKind::InsufficientData, context + ": each class needs at least 2 samples (got " +
                                              std::to_string(safe.size()) + " safe, " + std::to_string(unsafe.size()) +
                                              " unsafe)");
    }
    check_same_size(safe.front().size(), unsafe.front().size(), "fdr class dimensions");
    const MeanCov s = mean_and_cov(safe);
    const MeanCov u = mean_and_cov(unsafe);
    const SymmetricMatrix pooled = s.cov + u.cov;
    const double d = static_cast<double>(pooled.dim);
    const double eps = std::max(config.epsilon_floor, config.epsilon_scale * pooled.trace() / d);
    const Vector delta = subtract(s.mean, u.mean);
    const Vector y = regularized_solve(pooled, eps, delta, context);
    return {std::max(0.0, dot(delta, y)), eps};
}

inline double fdr(std::span<const Vector> safe, std::span<const Vector> unsafe, const FdrConfig& config = {}) {
    return fdr_detail(safe, unsafe, config).value;
}

struct LayerFdr {
    std::uint32_t layer = 0;  // 1-based
    double fdr = 0.0;
    double epsilon = 0.0;
    std::size_t n_safe = 0;
    std::size_t n_unsafe = 0;
};

struct FdrReport {
    std::vector<LayerFdr> layers;

    std::string to_csv() const {
        auto num = [](double v) {
            char buf[32];
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            (void)ec;
            return std::string(buf, ptr);
        };
        std::string out = "layer,fdr,epsilon,n_safe,n_unsafe\n";
        for (const auto& l : layers) {
            out += std::to_string(l.layer) + "," + num(l.fdr) + "," + num(l.epsilon) + "," + std::to_string(l.n_safe) +
                   "," + std::to_string(l.n_unsafe) + "\n";
        }
        return out;
    }
};

/// Number of layers a trace carries at its last token (1 when only the
/// last-layer activation is stored).
inline std::size_t layer_count(const ActivationTrace& t) {
    if (t.tokens.empty()) fail(ErrorKind::InvalidInput, "fdr: trace " + t.query_id + " has no tokens");
    const auto& last = t.tokens.back();
    return last.per_layer ? last.per_layer->size() : 1;
}

/// Activation of the final token at a 1-based layer.
inline const Vector& last_token_activation(const ActivationTrace& t, std::size_t layer) {
    const std::size_t available = layer_count(t);
    if (layer < 1 || layer > available) {
        fail(ErrorKind::OutOfRange, "fdr: layer " + std::to_string(layer) + " outside 1.." + std::to_string(available) +
                                        " for trace " + t.query_id);
    }
    const auto& last = t.tokens.back();
    return last.per_layer ? (*last.per_layer)[layer - 1] : last.last_layer;
}

/// One FDR value per layer in [first_layer, last_layer] (1-based, inclusive).
inline FdrReport fdr_report(std::span<const ActivationTrace> safe, std::span<const ActivationTrace> unsafe,
                            std::size_t first_layer, std::size_t last_layer, const FdrConfig& config = {}) {
    config.validate();
    if (first_layer < 1 || last_layer < first_layer) fail(ErrorKind::OutOfRange, "fdr: empty or invalid layer range");
    const std::uint32_t dim = safe.empty() ? 0 : safe.front().dim;
    for (auto group : {safe, unsafe}) {
        for (const auto& t : group) {
            if (t.dim != dim) fail(ErrorKind::DimensionMismatch, "fdr: traces with mixed dimensions");
        }
    }
    FdrReport report;
    report.layers.resize(last_layer - first_layer + 1);
    parallel_for(report.layers.size(), [&](std::size_t i) {
        const std::size_t layer = first_layer + i;
        std::vector<Vector> s, u;
        for (const auto& t : safe) s.push_back(last_token_activation(t, layer));
        for (const auto& t : unsafe) u.push_back(last_token_activation(t, layer));
        const auto v = fdr_detail(s, u, config, "fdr layer " + std::to_string(layer));
        report.layers[i] = {static_cast<std::uint32_t>(layer), v.value, v.epsilon, s.size(), u.size()};
    });
    return report;
}

}  // namespace ras::fdr
