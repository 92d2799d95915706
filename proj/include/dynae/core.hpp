// Dense vector helpers and seeded random number generation shared by the
// whole toolkit. Everything computes in 64-bit floats.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynae {

using Vec = std::vector<double>;

/// Seeded RNG. One seed yields one reproducible sample stream.
struct Rng {
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    /// Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal();
    }

    /// Independent stream for a sub-task; offset keeps streams distinct.
    Rng fork(std::uint64_t offset) const {
        return Rng(seed_ * 0x9e3779b97f4a7c15ULL + offset + 1);
    }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// y = W x + b with W row-major (rows x cols).
inline void affine_map(std::span<const double> w, std::span<const double> b,
                       std::span<const double> x, std::span<double> y) {
    const std::size_t rows = b.size(), cols = x.size();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w.data() + r * cols;
        double s = b[r];
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
        y[r] = s;
    }
}

/// y = W^T u, accumulating into y (caller zeroes if needed).
inline void matvec_transpose_add(std::span<const double> w, std::span<const double> u,
                                 std::span<double> y) {
    const std::size_t rows = u.size(), cols = y.size();
    for (std::size_t r = 0; r < rows; ++r) {
        const double ur = u[r];
        if (ur == 0.0) continue;
        const double* wr = w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) y[c] += ur * wr[c];
    }
}

/// W += u x^T (outer product accumulate), W row-major.
inline void outer_add(std::span<double> w, std::span<const double> u,
                      std::span<const double> x) {
    const std::size_t rows = u.size(), cols = x.size();
    for (std::size_t r = 0; r < rows; ++r) {
        const double ur = u[r];
        if (ur == 0.0) continue;
        double* wr = w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) wr[c] += ur * x[c];
    }
}

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace dynae
