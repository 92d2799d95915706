// Sliced-Wasserstein machinery: uniform directions on the unit sphere,
// sorted-coupling 1D W2^2 averaged over directions, and the per-bin
// displacement regularizer with gradients w.r.t. the encoded samples.
#pragma once

#include <algorithm>
#include <numeric>

#include "dynae/core.hpp"

namespace dynae {

struct DirectionSet {
    int d = 0;
    std::vector<Vec> dirs;

    std::size_t size() const { return dirs.size(); }
};

inline DirectionSet sample_directions(int d, int L, Rng& rng) {
    if (d < 1) throw std::invalid_argument("sample_directions: d must be >= 1");
    if (L < 1) throw std::invalid_argument("sample_directions: L must be >= 1");
    DirectionSet set;
    set.d = d;
    set.dirs.reserve(L);
    Vec v(d);
    while (static_cast<int>(set.dirs.size()) < L) {
        rng.fill_normal(v);
        const double norm = std::sqrt(squared_norm(v));
        if (norm < 1e-12) continue;  // degenerate draw; essentially never
        Vec unit(d);
        for (int i = 0; i < d; ++i) unit[i] = v[i] / norm;
        set.dirs.push_back(std::move(unit));
    }
    return set;
}

namespace detail {

// Scratch for one sliced_w2 evaluation, reused across directions.
struct SwScratch {
    Vec proj_a, proj_b;
    std::vector<std::size_t> order_a, order_b;

    void project(const DirectionSet& dirs, std::size_t l, const std::vector<Vec>& a,
                 const std::vector<Vec>& b) {
        const Vec& theta = dirs.dirs[l];
        const std::size_t n = a.size();
        proj_a.resize(n);
        proj_b.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            proj_a[i] = dot(theta, a[i]);
            proj_b[i] = dot(theta, b[i]);
        }
        order_a.resize(n);
        order_b.resize(n);
        std::iota(order_a.begin(), order_a.end(), std::size_t{0});
        std::iota(order_b.begin(), order_b.end(), std::size_t{0});
        // Stable sorts give a deterministic coupling at ties.
        std::stable_sort(order_a.begin(), order_a.end(),
                         [&](std::size_t x, std::size_t y) { return proj_a[x] < proj_a[y]; });
        std::stable_sort(order_b.begin(), order_b.end(),
                         [&](std::size_t x, std::size_t y) { return proj_b[x] < proj_b[y]; });
    }
};

inline void check_sw_inputs(const std::vector<Vec>& a, const std::vector<Vec>& b,
                            const DirectionSet& dirs) {
    if (a.empty() || a.size() != b.size())
        throw std::invalid_argument("sliced_w2: sample lists must be non-empty and equal-sized");
    if (dirs.dirs.empty()) throw std::invalid_argument("sliced_w2: empty direction set");
    for (const Vec& x : a)
        if (static_cast<int>(x.size()) != dirs.d)
            throw std::invalid_argument("sliced_w2: sample dimension mismatch");
    for (const Vec& x : b)
        if (static_cast<int>(x.size()) != dirs.d)
            throw std::invalid_argument("sliced_w2: sample dimension mismatch");
}

}  // namespace detail

/// Squared sliced 2-Wasserstein distance between equal-sized samples:
/// projections onto each direction are coupled by sort order, squared
/// differences averaged over directions and sample index.
inline double sliced_w2(const std::vector<Vec>& a, const std::vector<Vec>& b,
                        const DirectionSet& dirs) {
    detail::check_sw_inputs(a, b, dirs);
    const std::size_t n = a.size();
    detail::SwScratch scratch;
    double acc = 0.0;
    for (std::size_t l = 0; l < dirs.size(); ++l) {
        scratch.project(dirs, l, a, b);
        for (std::size_t k = 0; k < n; ++k) {
            const double diff = scratch.proj_a[scratch.order_a[k]] -
                                scratch.proj_b[scratch.order_b[k]];
            acc += diff * diff;
        }
    }
    return acc / (static_cast<double>(dirs.size()) * static_cast<double>(n));
}

/// sliced_w2 plus its gradient w.r.t. the points of `a`. The sorted coupling
/// is held fixed; the gradient flows through the projected coordinates only.
/// grad_a must be shaped like a; contributions are accumulated with `scale`.
inline double sliced_w2_grad(const std::vector<Vec>& a, const std::vector<Vec>& b,
                             const DirectionSet& dirs, std::vector<Vec>& grad_a,
                             double scale = 1.0) {
    detail::check_sw_inputs(a, b, dirs);
    if (grad_a.size() != a.size())
        throw std::invalid_argument("sliced_w2_grad: gradient buffer shape mismatch");
    const std::size_t n = a.size();
    const double w = 1.0 / (static_cast<double>(dirs.size()) * static_cast<double>(n));
    detail::SwScratch scratch;
    double acc = 0.0;
    for (std::size_t l = 0; l < dirs.size(); ++l) {
        scratch.project(dirs, l, a, b);
        const Vec& theta = dirs.dirs[l];
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t ia = scratch.order_a[k];
            const double diff = scratch.proj_a[ia] - scratch.proj_b[scratch.order_b[k]];
            acc += diff * diff;
            Vec& g = grad_a[ia];
            const double coef = scale * w * 2.0 * diff;
            for (int j = 0; j < dirs.d; ++j) g[j] += coef * theta[j];
        }
    }
    return acc * w;
}

struct BinnedSwResult {
    double value = 0.0;
    int skipped_bins = 0;  // bins with zero samples, excluded from the mean
};

/// Mean per-bin sliced_w2 between encoded displacements and prior samples.
/// Counts must match bin-by-bin; empty bins are skipped and counted.
inline BinnedSwResult binned_sw_regularizer(const std::vector<std::vector<Vec>>& encoded,
                                            const std::vector<std::vector<Vec>>& prior_samples,
                                            const DirectionSet& dirs) {
    if (encoded.size() != prior_samples.size())
        throw std::invalid_argument("binned_sw_regularizer: bin count mismatch");
    if (encoded.empty()) throw std::invalid_argument("binned_sw_regularizer: no bins");
    BinnedSwResult res;
    int live = 0;
    for (std::size_t k = 0; k < encoded.size(); ++k) {
        if (encoded[k].size() != prior_samples[k].size())
            throw std::invalid_argument("binned_sw_regularizer: per-bin count mismatch");
        if (encoded[k].empty()) {
            ++res.skipped_bins;
            continue;
        }
        res.value += sliced_w2(encoded[k], prior_samples[k], dirs);
        ++live;
    }
    if (live > 0) res.value /= live;
    return res;
}

/// Gradient version; grads is shaped like encoded and accumulated into.
inline BinnedSwResult binned_sw_regularizer_grad(
    const std::vector<std::vector<Vec>>& encoded,
    const std::vector<std::vector<Vec>>& prior_samples, const DirectionSet& dirs,
    std::vector<std::vector<Vec>>& grads) {
    if (encoded.size() != prior_samples.size() || encoded.size() != grads.size())
        throw std::invalid_argument("binned_sw_regularizer: bin count mismatch");
    if (encoded.empty()) throw std::invalid_argument("binned_sw_regularizer: no bins");
    int live = 0;
    for (const auto& bin : encoded)
        if (!bin.empty()) ++live;
    BinnedSwResult res;
    if (live == 0) {
        res.skipped_bins = static_cast<int>(encoded.size());
        return res;
    }
    const double scale = 1.0 / live;
    for (std::size_t k = 0; k < encoded.size(); ++k) {
        if (encoded[k].size() != prior_samples[k].size())
            throw std::invalid_argument("binned_sw_regularizer: per-bin count mismatch");
        if (encoded[k].empty()) {
            ++res.skipped_bins;
            continue;
        }
        res.value += sliced_w2_grad(encoded[k], prior_samples[k], dirs, grads[k], scale);
    }
    res.value *= scale;
    return res;
}

}  // namespace dynae
