#pragma once

// Shared test helpers: seeded generators and extended-precision references.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "ras/numerics.hpp"
#include "ras/rng.hpp"

namespace ras::testing {

using Big = boost::multiprecision::cpp_bin_float_50;

/// Sequential draws from a CounterRng stream.
class Gen {
public:
    // Normal draws consume two uniforms internally, so they get their own stream.
    explicit Gen(std::uint64_t seed, std::uint64_t stream = 0) : rng_(seed), stream_(2 * stream) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return rng_.uniform(stream_, next_++, lo, hi); }
    double normal() { return rng_.normal(stream_ + 1, next_normal_++); }
    std::uint64_t bits() { return rng_.bits(stream_, next_++); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(bits() % n); }

    Vector normal_vector(std::size_t n, double scale = 1.0) {
        Vector v(n);
        for (auto& x : v) x = scale * normal();
        return v;
    }
    Vector uniform_vector(std::size_t n, double lo = -1.0, double hi = 1.0) {
        Vector v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }
    Vector probability(std::size_t n) {
        Vector v(n);
        double total = 0.0;
        for (auto& x : v) total += (x = uniform(0.01, 1.0));
        for (auto& x : v) x /= total;
        return v;
    }

private:
    CounterRng rng_;
    std::uint64_t stream_;
    std::uint64_t next_ = 0;
    std::uint64_t next_normal_ = 0;
};

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

inline std::vector<Big> big_softmax(const Vector& z) {
    std::vector<Big> e;
    Big total = 0;
    for (double v : z) {
        e.push_back(boost::multiprecision::exp(Big(v)));
        total += e.back();
    }
    for (auto& v : e) v /= total;
    return e;
}

inline Big big_dot(const Vector& a, const Vector& b) {
    Big acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += Big(a[i]) * Big(b[i]);
    return acc;
}

inline double big_cosine(const Vector& a, const Vector& b) {
    const Big num = big_dot(a, b);
    const Big den = boost::multiprecision::sqrt(big_dot(a, a) * big_dot(b, b));
    return static_cast<double>(num / den);
}

/// Inverse of a d <= 4 matrix through the adjugate (cofactor expansion).
inline std::vector<std::vector<Big>> adjugate_inverse(const std::vector<std::vector<Big>>& m) {
    const std::size_t n = m.size();
    auto minor = [](const std::vector<std::vector<Big>>& a, std::size_t r, std::size_t c) {
        std::vector<std::vector<Big>> out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (i == r) continue;
            std::vector<Big> row;
            for (std::size_t j = 0; j < a.size(); ++j)
                if (j != c) row.push_back(a[i][j]);
            out.push_back(row);
        }
        return out;
    };
    std::function<Big(const std::vector<std::vector<Big>>&)> det = [&](const std::vector<std::vector<Big>>& a) -> Big {
        if (a.size() == 1) return a[0][0];
        Big acc = 0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const Big term = a[0][j] * det(minor(a, 0, j));
            acc += (j % 2 == 0) ? term : Big(-term);
        }
        return acc;
    };
    const Big d = det(m);
    std::vector<std::vector<Big>> inv(n, std::vector<Big>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const Big cof = n == 1 ? Big(1) : det(minor(m, j, i));
            inv[i][j] = ((i + j) % 2 == 0 ? cof : Big(-cof)) / d;
        }
    }
    return inv;
}

/// Extended-precision FDR with the same scale-aware ridge, through an explicit
/// adjugate inverse (d <= 4).
inline double big_fdr(const std::vector<Vector>& s, const std::vector<Vector>& u, double eps_scale, double eps_floor) {
    const std::size_t d = s.front().size();
    auto moments = [&](const std::vector<Vector>& xs, std::vector<Big>& mean, std::vector<std::vector<Big>>& cov) {
        mean.assign(d, Big(0));
        for (const auto& x : xs)
            for (std::size_t k = 0; k < d; ++k) mean[k] += Big(x[k]);
        for (auto& m : mean) m /= xs.size();
        cov.assign(d, std::vector<Big>(d, Big(0)));
        for (const auto& x : xs)
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) cov[a][b] += (Big(x[a]) - mean[a]) * (Big(x[b]) - mean[b]);
        for (auto& row : cov)
            for (auto& v : row) v /= (xs.size() - 1);
    };
    std::vector<Big> ms, mu;
    std::vector<std::vector<Big>> cs, cu;
    moments(s, ms, cs);
    moments(u, mu, cu);
    std::vector<std::vector<Big>> pooled(d, std::vector<Big>(d));
    Big tr = 0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) pooled[a][b] = cs[a][b] + cu[a][b];
        tr += pooled[a][a];
    }
    const Big eps = std::max(Big(eps_floor), Big(eps_scale) * tr / d);
    for (std::size_t a = 0; a < d; ++a) pooled[a][a] += eps;
    const auto inv = adjugate_inverse(pooled);
    Big q = 0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) q += (ms[a] - mu[a]) * inv[a][b] * (ms[b] - mu[b]);
    return static_cast<double>(q);
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("ras_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace ras::testing
