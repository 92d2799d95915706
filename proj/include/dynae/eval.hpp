// Evaluation of learned representations: affine and similarity recovery of
// ground-truth factors, latent distribution shape statistics, and grid
// exports of the learned force/diffusion fields and free energy.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "dynae/langevin.hpp"
#include "dynae/trajectory.hpp"

namespace dynae {

struct RecoveryReport {
    double affine_r2 = 0.0;        // 1 - SSE/SST per truth dimension, averaged
    double procrustes_error = 0.0; // normalized residual after best similarity map
    std::vector<double> correlation;  // corr(z_i, truth_j), d x d row-major
    bool rank_deficient = false;
};

namespace detail {

inline Eigen::MatrixXd to_matrix(const std::vector<Vec>& rows) {
    Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

}  // namespace detail

/// Least-squares affine fit truth ~ A z + b plus a similarity-Procrustes
/// alignment (rotation, reflection, translation, uniform scale). The
/// normalized Procrustes residual is 0 exactly when z is a similarity
/// transform of the truth. Rank-deficient z is flagged, not rejected.
inline RecoveryReport affine_recovery(const std::vector<Vec>& z,
                                      const std::vector<Vec>& truth) {
    if (z.size() != truth.size()) throw std::invalid_argument("affine_recovery: frame counts");
    if (z.size() < 2) throw std::invalid_argument("affine_recovery: need at least 2 frames");
    const std::size_t n = z.size();
    const std::size_t d = z.front().size();
    if (d == 0 || truth.front().size() != d)
        throw std::invalid_argument("affine_recovery: dimension mismatch");

    Eigen::MatrixXd design(n, d + 1);
    design.leftCols(d) = detail::to_matrix(z);
    design.col(d).setOnes();
    const Eigen::MatrixXd t = detail::to_matrix(truth);

    RecoveryReport report;
    const auto qr = design.colPivHouseholderQr();
    report.rank_deficient = qr.rank() < static_cast<Eigen::Index>(d + 1);
    const Eigen::MatrixXd coef = qr.solve(t);
    const Eigen::MatrixXd resid = t - design * coef;

    double r2_sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double mean = t.col(j).mean();
        const double sse = resid.col(j).squaredNorm();
        const double sst = (t.col(j).array() - mean).matrix().squaredNorm();
        if (sst > 1e-24 * n * (1.0 + mean * mean))
            r2_sum += 1.0 - sse / sst;
        else
            r2_sum += sse <= 1e-12 * n ? 1.0 : 0.0;  // constant truth column
    }
    report.affine_r2 = r2_sum / d;

    Eigen::MatrixXd zc = design.leftCols(d);
    zc.rowwise() -= zc.colwise().mean();
    Eigen::MatrixXd tc = t;
    tc.rowwise() -= tc.colwise().mean();
    const double zn = zc.squaredNorm(), tn = tc.squaredNorm();
    if (zn < 1e-20 * n || tn < 1e-20 * n) {
        report.procrustes_error = 1.0;
        report.rank_deficient = true;
    } else {
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(zc.transpose() * tc);
        const double trace = svd.singularValues().sum();
        report.procrustes_error = std::max(0.0, 1.0 - trace * trace / (zn * tn));
    }

    report.correlation.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const Eigen::ArrayXd zi = zc.col(i).array();
        const double zs = std::sqrt(zi.square().sum());
        for (std::size_t j = 0; j < d; ++j) {
            const Eigen::ArrayXd tj = tc.col(j).array();
            const double ts = std::sqrt(tj.square().sum());
            if (zs > 0.0 && ts > 0.0)
                report.correlation[i * d + j] = (zi * tj).sum() / (zs * ts);
        }
    }
    return report;
}

struct DimShape {
    double spread_ratio = 0.0;  // (max-min)/(sqrt(12) sigma); 1 for ideal uniform
    double kurtosis = 0.0;      // 1.8 uniform, 3.0 Gaussian
    double ks_uniform = 0.0;    // KS statistic against best-fit (min/max) uniform
    double ks_gaussian = 0.0;   // KS statistic against moment-fit Gaussian
    bool degenerate = false;    // zero-variance dimension, statistics unset
};

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Per-dimension shape statistics after standardization.
inline std::vector<DimShape> distribution_shape(const std::vector<Vec>& z) {
    if (z.size() < 100) throw std::invalid_argument("distribution_shape: need >= 100 frames");
    const std::size_t n = z.size();
    const std::size_t d = z.front().size();
    std::vector<DimShape> out(d);
    Vec col(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = z[i][j];
        double mean = 0.0;
        for (double v : col) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : col) var += (v - mean) * (v - mean);
        var /= n;
        // Relative floor: cancellation dust from a constant column is not
        // spread.
        if (var <= 1e-24 * (1.0 + mean * mean)) {
            out[j].degenerate = true;
            continue;
        }
        const double sigma = std::sqrt(var);
        for (double& v : col) v = (v - mean) / sigma;
        std::sort(col.begin(), col.end());

        double m4 = 0.0;
        for (double v : col) m4 += v * v * v * v;
        out[j].kurtosis = m4 / n;
        const double mn = col.front(), mx = col.back();
        out[j].spread_ratio = (mx - mn) / std::sqrt(12.0);

        double ks_u = 0.0, ks_g = 0.0;
        const double width = mx - mn;
        for (std::size_t i = 0; i < n; ++i) {
            const double lo_rank = static_cast<double>(i) / n;
            const double hi_rank = static_cast<double>(i + 1) / n;
            const double fu = (col[i] - mn) / width;
            ks_u = std::max({ks_u, fu - lo_rank, hi_rank - fu});
            const double fg = gaussian_cdf(col[i]);
            ks_g = std::max({ks_g, fg - lo_rank, hi_rank - fg});
        }
        out[j].ks_uniform = ks_u;
        out[j].ks_gaussian = ks_g;
    }
    return out;
}

struct FieldGrid {
    Vec lo, hi;          // inclusive bounds per latent coordinate
    std::vector<int> n;  // points per coordinate
};

/// CSV grid of the learned force and diffusion diagonals over a 2-D latent
/// box, for external plotting. Columns: z1,z2,f1,f2,M11,M22; z2 varies
/// fastest.
inline std::string export_fields(const PriorModel& prior, const FieldGrid& grid) {
    if (prior.latent_dim() != 2) throw std::invalid_argument("export_fields: needs d = 2");
    if (grid.lo.size() != 2 || grid.hi.size() != 2 || grid.n.size() != 2)
        throw std::invalid_argument("export_fields: grid must be 2-D");
    for (int c : grid.n)
        if (c < 1) throw std::invalid_argument("export_fields: grid counts must be positive");

    auto coord = [&](int axis, int i) {
        if (grid.n[axis] == 1) return 0.5 * (grid.lo[axis] + grid.hi[axis]);
        return grid.lo[axis] +
               (grid.hi[axis] - grid.lo[axis]) * i / static_cast<double>(grid.n[axis] - 1);
    };
    std::string out = "z1,z2,f1,f2,M11,M22\n";
    Vec zpt(2);
    for (int i = 0; i < grid.n[0]; ++i) {
        zpt[0] = coord(0, i);
        for (int j = 0; j < grid.n[1]; ++j) {
            zpt[1] = coord(1, j);
            const Vec f = mlp_forward(prior.force_net, zpt);
            const Vec m = prior_diffusion(prior, zpt);
            out += detail::format_double(zpt[0]);
            out += ',';
            out += detail::format_double(zpt[1]);
            out += ',';
            out += detail::format_double(f[0]);
            out += ',';
            out += detail::format_double(f[1]);
            out += ',';
            out += detail::format_double(m[0]);
            out += ',';
            out += detail::format_double(m[1]);
            out += '\n';
        }
    }
    return out;
}

struct FreeEnergyGrid {
    int bins = 0;
    Vec lo, hi;                        // data bounds per coordinate
    std::vector<std::int64_t> counts;  // bins x bins, second coordinate fastest
    Vec f;                             // -log(p + half-count floor), min-shifted to 0
};

/// 2-D histogram free energy. Empty cells are capped through the density
/// floor of half a count, so F stays finite everywhere.
inline FreeEnergyGrid free_energy_histogram(const std::vector<Vec>& z, int bins) {
    if (bins < 1) throw std::invalid_argument("free_energy_histogram: bins must be positive");
    if (z.size() < static_cast<std::size_t>(bins))
        throw std::invalid_argument("free_energy_histogram: need at least `bins` frames");
    if (z.front().size() != 2)
        throw std::invalid_argument("free_energy_histogram: needs d = 2");
    const std::size_t n = z.size();

    FreeEnergyGrid grid;
    grid.bins = bins;
    grid.lo = z.front();
    grid.hi = z.front();
    for (const Vec& p : z)
        for (int j = 0; j < 2; ++j) {
            grid.lo[j] = std::min(grid.lo[j], p[j]);
            grid.hi[j] = std::max(grid.hi[j], p[j]);
        }
    for (int j = 0; j < 2; ++j)
        if (grid.hi[j] <= grid.lo[j]) {
            grid.lo[j] -= 0.5;
            grid.hi[j] += 0.5;
        }

    grid.counts.assign(static_cast<std::size_t>(bins) * bins, 0);
    for (const Vec& p : z) {
        int idx[2];
        for (int j = 0; j < 2; ++j) {
            const double u = (p[j] - grid.lo[j]) / (grid.hi[j] - grid.lo[j]);
            idx[j] = std::min(bins - 1, static_cast<int>(u * bins));
        }
        grid.counts[static_cast<std::size_t>(idx[0]) * bins + idx[1]] += 1;
    }

    grid.f.resize(grid.counts.size());
    const double floor_p = 0.5 / static_cast<double>(n);
    double fmin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.counts.size(); ++k) {
        const double p = static_cast<double>(grid.counts[k]) / static_cast<double>(n);
        grid.f[k] = -std::log(p + floor_p);
        fmin = std::min(fmin, grid.f[k]);
    }
    for (double& v : grid.f) v -= fmin;
    return grid;
}

inline std::string free_energy_csv(const FreeEnergyGrid& grid) {
    std::string out = "z1,z2,count,free_energy\n";
    for (int i = 0; i < grid.bins; ++i) {
        const double z1 =
            grid.lo[0] + (grid.hi[0] - grid.lo[0]) * (i + 0.5) / grid.bins;
        for (int j = 0; j < grid.bins; ++j) {
            const double z2 =
                grid.lo[1] + (grid.hi[1] - grid.lo[1]) * (j + 0.5) / grid.bins;
            const std::size_t k = static_cast<std::size_t>(i) * grid.bins + j;
            out += detail::format_double(z1);
            out += ',';
            out += detail::format_double(z2);
            out += ',';
            out += std::to_string(grid.counts[k]);
            out += ',';
            out += detail::format_double(grid.f[k]);
            out += '\n';
        }
    }
    return out;
}

inline nlohmann::ordered_json recovery_to_json(const RecoveryReport& report) {
    nlohmann::ordered_json j;
    j["affine_r2"] = report.affine_r2;
    j["procrustes_error"] = report.procrustes_error;
    j["correlation"] = report.correlation;
    j["rank_deficient"] = report.rank_deficient;
    return j;
}

inline nlohmann::ordered_json shape_to_json(const std::vector<DimShape>& shapes) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const DimShape& s : shapes) {
        nlohmann::ordered_json j;
        j["spread_ratio"] = s.spread_ratio;
        j["kurtosis"] = s.kurtosis;
        j["ks_uniform"] = s.ks_uniform;
        j["ks_gaussian"] = s.ks_gaussian;
        j["degenerate"] = s.degenerate;
        arr.push_back(std::move(j));
    }
    return arr;
}

}  // namespace dynae
