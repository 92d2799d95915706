// Latent-space discretization: streaming regular-space clustering, Voronoi
// assignment, well-tempered resampling counts, and dataset resampling.
#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "dynae/core.hpp"

namespace dynae {

/// Streaming pass in data order: a point becomes a new center iff it lies at
/// least d_min from every existing center. The first point is always a center.
/// Stops early once max_centers is exceeded (0 = unlimited).
inline std::vector<Vec> regular_space_cluster(const std::vector<Vec>& points, double d_min,
                                              std::size_t max_centers = 0) {
    if (points.empty()) throw std::invalid_argument("regular_space_cluster: empty input");
    if (!(d_min > 0.0)) throw std::invalid_argument("regular_space_cluster: d_min must be > 0");
    const double d2 = d_min * d_min;
    std::vector<Vec> centers;
    centers.push_back(points.front());
    for (std::size_t i = 1; i < points.size(); ++i) {
        bool separated = true;
        for (const Vec& c : centers) {
            if (squared_distance(points[i], c) < d2) {
                separated = false;
                break;
            }
        }
        if (separated) {
            centers.push_back(points[i]);
            if (max_centers && centers.size() > max_centers) break;
        }
    }
    return centers;
}

/// Nearest center per point; ties broken by lowest center index.
inline std::vector<int> assign_voronoi(const std::vector<Vec>& points,
                                       const std::vector<Vec>& centers) {
    if (centers.empty()) throw std::invalid_argument("assign_voronoi: no centers");
    std::vector<int> assignment(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        int best = 0;
        double best_d = squared_distance(points[i], centers[0]);
        for (std::size_t k = 1; k < centers.size(); ++k) {
            const double d = squared_distance(points[i], centers[k]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        assignment[i] = best;
    }
    return assignment;
}

/// Per-bin target counts N_k proportional to raw^(1/gamma), normalized to sum
/// exactly N via largest-remainder rounding (fraction ties to lowest index).
/// gamma = +infinity is the uniform-over-occupied-bins limit. Every occupied
/// bin keeps N_k >= 1 automatically: raw >= 1 implies weight >= 1 while the
/// weights sum to at most N, so every occupied share is >= 1.
inline std::vector<std::int64_t> welltempered_counts(const std::vector<std::int64_t>& raw,
                                                     double gamma, std::int64_t n_total) {
    if (!(gamma >= 1.0)) throw std::invalid_argument("welltempered_counts: gamma must be >= 1");
    if (raw.empty()) throw std::invalid_argument("welltempered_counts: no bins");
    const std::int64_t raw_sum = std::accumulate(raw.begin(), raw.end(), std::int64_t{0});
    if (raw_sum != n_total)
        throw std::invalid_argument("welltempered_counts: raw counts must sum to N");
    for (std::int64_t c : raw)
        if (c < 0) throw std::invalid_argument("welltempered_counts: negative raw count");

    const std::size_t k = raw.size();
    if (n_total == 0) return std::vector<std::int64_t>(k, 0);
    Vec weights(k, 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (raw[i] > 0)
            weights[i] = std::isinf(gamma) ? 1.0
                                           : std::pow(static_cast<double>(raw[i]), 1.0 / gamma);
        wsum += weights[i];
    }

    std::vector<std::int64_t> counts(k, 0);
    Vec frac(k, 0.0);
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double share = n_total * weights[i] / wsum;
        counts[i] = static_cast<std::int64_t>(std::floor(share));
        frac[i] = share - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    const std::int64_t leftover = n_total - assigned;
    for (std::int64_t i = 0; i < leftover; ++i) counts[order[i]] += 1;
    return counts;
}

/// Draws counts[k] sample indices per bin: without replacement when the bin
/// holds enough samples, with replacement otherwise. Output is grouped by bin
/// in ascending bin order.
inline std::vector<std::size_t> resample_dataset(const std::vector<int>& labels,
                                                 const std::vector<std::int64_t>& counts,
                                                 Rng& rng) {
    std::vector<std::vector<std::size_t>> by_bin(counts.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= counts.size())
            throw std::invalid_argument("resample_dataset: label out of range");
        by_bin[labels[i]].push_back(i);
    }
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const std::int64_t want = counts[k];
        auto& pool = by_bin[k];
        if (want == 0) continue;
        if (pool.empty())
            throw std::invalid_argument("resample_dataset: bin " + std::to_string(k) +
                                        " is empty but has positive target count");
        if (static_cast<std::size_t>(want) <= pool.size()) {
            // Partial Fisher-Yates: the first `want` entries become the draw.
            for (std::int64_t j = 0; j < want; ++j) {
                const std::size_t pick = j + rng.uniform_index(pool.size() - j);
                std::swap(pool[j], pool[pick]);
                out.push_back(pool[j]);
            }
        } else {
            for (std::int64_t j = 0; j < want; ++j)
                out.push_back(pool[rng.uniform_index(pool.size())]);
        }
    }
    return out;
}

struct BinPartition {
    std::vector<Vec> centers;
    double d_min = 0.0;
    std::vector<int> assignment;
    std::vector<std::int64_t> raw_counts;
    std::vector<std::int64_t> resampled_counts;

    std::size_t n_bins() const { return centers.size(); }
};

inline BinPartition build_partition(const std::vector<Vec>& points, double d_min, double gamma) {
    BinPartition part;
    part.d_min = d_min;
    part.centers = regular_space_cluster(points, d_min);
    part.assignment = assign_voronoi(points, part.centers);
    part.raw_counts.assign(part.centers.size(), 0);
    for (int a : part.assignment) part.raw_counts[a] += 1;
    part.resampled_counts = welltempered_counts(part.raw_counts, gamma,
                                                static_cast<std::int64_t>(points.size()));
    return part;
}

/// Searches for a d_min whose center count lands in [k_lo, k_hi] on the given
/// points. Bisects on a log scale between the data diameter and a small
/// fraction of it.
inline double calibrate_dmin(const std::vector<Vec>& points, std::size_t k_lo = 20,
                             std::size_t k_hi = 100) {
    if (points.empty()) throw std::invalid_argument("calibrate_dmin: empty input");
    if (k_lo < 1 || k_hi < k_lo) throw std::invalid_argument("calibrate_dmin: bad bin band");
    const std::size_t d = points.front().size();
    Vec lo(points.front()), hi(points.front());
    for (const Vec& p : points)
        for (std::size_t j = 0; j < d; ++j) {
            lo[j] = std::min(lo[j], p[j]);
            hi[j] = std::max(hi[j], p[j]);
        }
    double diam2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) diam2 += (hi[j] - lo[j]) * (hi[j] - lo[j]);
    const double diameter = std::sqrt(diam2);
    if (!(diameter > 0.0))
        throw std::runtime_error("calibrate_dmin: degenerate data, all points identical");

    auto count_centers = [&](double dmin) {
        return regular_space_cluster(points, dmin, k_hi + 1).size();
    };
    double upper = diameter * 1.01;  // K = 1 up here
    double lower = upper;
    std::size_t k_at_lower = 1;
    for (int i = 0; i < 60; ++i) {
        lower *= 0.7;
        k_at_lower = count_centers(lower);
        if (k_at_lower >= k_lo) break;
    }
    if (k_at_lower < k_lo)
        throw std::runtime_error("calibrate_dmin: cannot reach requested bin count");
    if (k_at_lower <= k_hi) return lower;
    for (int i = 0; i < 80; ++i) {
        const double mid = std::sqrt(lower * upper);
        const std::size_t k = count_centers(mid);
        if (k >= k_lo && k <= k_hi) return mid;
        (k > k_hi ? lower : upper) = mid;
    }
    throw std::runtime_error("calibrate_dmin: bin-count band unreachable for this data");
}

inline nlohmann::json partition_to_json(const BinPartition& part) {
    nlohmann::json j;
    j["d_min"] = part.d_min;
    j["n_bins"] = part.n_bins();
    j["centers"] = part.centers;
    j["raw_counts"] = part.raw_counts;
    j["resampled_counts"] = part.resampled_counts;
    return j;
}

inline void save_partition(const BinPartition& part, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open partition dump for writing: " + path);
    out << partition_to_json(part).dump(2) << '\n';
}

}  // namespace dynae
