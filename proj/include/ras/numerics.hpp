#pragma once

// Dense vector/matrix primitives shared by every stage of the pipeline.
//
// Accumulation is pairwise with a fixed traversal order, so every result is
// run-to-run deterministic. Sums that must not depend on the order of their
// inputs (means over sample sets) go through canonical_sum, which sorts first.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ras/error.hpp"

namespace ras {

using Vector = std::vector<double>;

namespace detail {
inline constexpr std::size_t kPairwiseBlock = 8;
}

/// Sum of f(0) + ... + f(n-1) using a balanced binary tree over the index range.
template <class F>
double pairwise_reduce(std::size_t begin, std::size_t end, const F& f) {
    const std::size_t n = end - begin;
    if (n <= detail::kPairwiseBlock) {
        double acc = 0.0;
        for (std::size_t i = begin; i < end; ++i) acc += f(i);
        return acc;
    }
    const std::size_t mid = begin + n / 2;
    return pairwise_reduce(begin, mid, f) + pairwise_reduce(mid, end, f);
}

inline double pairwise_sum(std::span<const double> values) {
    return pairwise_reduce(0, values.size(), [&](std::size_t i) { return values[i]; });
}

/// Order-independent sum: the multiset of values determines the result bitwise.
inline double canonical_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return pairwise_sum(values);
}

inline void check_same_size(std::size_t a, std::size_t b, const char* context) {
    if (a != b) {
        fail(ErrorKind::DimensionMismatch, std::string(context) + ": length " + std::to_string(a) +
                                               " vs " + std::to_string(b));
    }
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> v, const char* context) {
    if (!all_finite(v)) fail(ErrorKind::InvalidInput, std::string(context) + ": non-finite entry");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    check_same_size(a.size(), b.size(), "dot");
    return pairwise_reduce(0, a.size(), [&](std::size_t i) { return a[i] * b[i]; });
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
    check_same_size(a.size(), b.size(), "subtract");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

/// Numerically stable softmax: exp(z - max z) / sum exp(z - max z).
inline Vector softmax(std::span<const double> logits) {
    if (logits.empty()) fail(ErrorKind::InvalidInput, "softmax: empty input");
    require_finite(logits, "softmax");
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - peak);
    const double total = pairwise_sum(out);
    for (double& p : out) p /= total;
    return out;
}

/// Cosine similarity, clamped to [-1, 1].
inline double cosine(std::span<const double> a, std::span<const double> b) {
    check_same_size(a.size(), b.size(), "cosine");
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorKind::Degenerate, "cosine: zero-norm operand");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// [gamma^0, gamma^1, ..., gamma^(n-1)]
inline Vector decay_weights(double gamma, std::size_t n_tokens) {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        fail(ErrorKind::InvalidConfig, "decay_weights: gamma must lie in (0,1), got " + std::to_string(gamma));
    }
    if (n_tokens == 0) fail(ErrorKind::InvalidConfig, "decay_weights: n_tokens must be >= 1");
    Vector w(n_tokens);
    w[0] = 1.0;
    for (std::size_t n = 1; n < n_tokens; ++n) w[n] = w[n - 1] * gamma;
    return w;
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

inline Vector matvec(const Matrix& m, std::span<const double> x) {
    check_same_size(m.cols, x.size(), "matvec");
    Vector out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
    return out;
}

/// Square matrix kept symmetric by construction (both triangles stored).
struct SymmetricMatrix {
    std::size_t dim = 0;
    std::vector<double> data;

    SymmetricMatrix() = default;
    explicit SymmetricMatrix(std::size_t d, double fill = 0.0) : dim(d), data(d * d, fill) {}

    static SymmetricMatrix identity(std::size_t d) {
        SymmetricMatrix m(d);
        for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * dim + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * dim + c]; }

    double trace() const {
        return pairwise_reduce(0, dim, [&](std::size_t i) { return (*this)(i, i); });
    }

    bool is_symmetric(double rel_tol = 1e-9) const {
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = i + 1; j < dim; ++j) {
                const double a = (*this)(i, j);
                const double b = (*this)(j, i);
                const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
                if (std::abs(a - b) > rel_tol * scale) return false;
            }
        }
        return true;
    }

    bool operator==(const SymmetricMatrix&) const = default;
};

inline SymmetricMatrix operator+(const SymmetricMatrix& a, const SymmetricMatrix& b) {
    check_same_size(a.dim, b.dim, "matrix add");
    SymmetricMatrix out(a.dim);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

struct MeanCov {
    Vector mean;
    SymmetricMatrix cov;
};

/// Sample mean and unbiased (count - 1) covariance. Both are invariant to the
/// order of `samples` bitwise.
inline MeanCov mean_and_cov(std::span<const Vector> samples) {
    if (samples.size() < 2) {
        fail(ErrorKind::InsufficientData,
             "mean_and_cov: need at least 2 samples, got " + std::to_string(samples.size()));
    }
    const std::size_t d = samples.front().size();
    if (d == 0) fail(ErrorKind::InvalidInput, "mean_and_cov: zero-dimensional samples");
    for (const auto& s : samples) {
        check_same_size(s.size(), d, "mean_and_cov");
        require_finite(s, "mean_and_cov");
    }
    const double count = static_cast<double>(samples.size());

    MeanCov out{Vector(d), SymmetricMatrix(d)};
    std::vector<double> column(samples.size());
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < samples.size(); ++i) column[i] = samples[i][k];
        out.mean[k] = canonical_sum(column) / count;
    }
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                column[i] = (samples[i][a] - out.mean[a]) * (samples[i][b] - out.mean[b]);
            }
            const double c = canonical_sum(column) / (count - 1.0);
            out.cov(a, b) = c;
            out.cov(b, a) = c;
        }
    }
    return out;
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns false if a non-positive pivot is encountered.
inline bool cholesky(const SymmetricMatrix& m, Matrix& lower) {
    const std::size_t d = m.dim;
    lower = Matrix(d, d);
    for (std::size_t j = 0; j < d; ++j) {
        const double diag = m(j, j) - pairwise_reduce(0, j, [&](std::size_t k) { return lower(j, k) * lower(j, k); });
        if (!(diag > 0.0) || !std::isfinite(diag)) return false;
        const double pivot = std::sqrt(diag);
        lower(j, j) = pivot;
        for (std::size_t i = j + 1; i < d; ++i) {
            const double off = m(i, j) - pairwise_reduce(0, j, [&](std::size_t k) { return lower(i, k) * lower(j, k); });
            lower(i, j) = off / pivot;
        }
    }
    return true;
}

/// Solves (m + epsilon*I) y = rhs through a Cholesky factorization.
/// `context` names the caller (e.g. a layer) in the error message on failure.
inline Vector regularized_solve(const SymmetricMatrix& m, double epsilon, std::span<const double> rhs,
                                const std::string& context = "regularized_solve") {
    check_same_size(m.dim, rhs.size(), "regularized_solve");
    if (!(epsilon >= 0.0)) fail(ErrorKind::InvalidConfig, context + ": epsilon must be >= 0");
    SymmetricMatrix shifted = m;
    for (std::size_t i = 0; i < m.dim; ++i) shifted(i, i) += epsilon;

    Matrix lower;
    if (!cholesky(shifted, lower)) {
        fail(ErrorKind::SingularMatrix, context + ": matrix is not positive definite after regularization");
    }
    const std::size_t d = m.dim;
    Vector z(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double acc = pairwise_reduce(0, i, [&](std::size_t k) { return lower(i, k) * z[k]; });
        z[i] = (rhs[i] - acc) / lower(i, i);
    }
    Vector y(d);
    for (std::size_t ii = d; ii-- > 0;) {
        const double acc = pairwise_reduce(ii + 1, d, [&](std::size_t k) { return lower(k, ii) * y[k]; });
        y[ii] = (z[ii] - acc) / lower(ii, ii);
    }
    return y;
}

}  // namespace ras
