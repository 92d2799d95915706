// Synthetic experiment generators: a 2D three-well Langevin system with a
// nonlinear observation warp, and square-sprite images driven by reflected
// Gaussian random walks over ground-truth factors.
#pragma once

#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "dynae/langevin.hpp"
#include "dynae/trajectory.hpp"

namespace dynae {

// --------------------------------------------------------------------------
// Three-well potential: a Gaussian mixture free energy plus a quartic
// confinement. Wells at (-1,0), (1,0), (0,1.5), width sigma = 0.35.

namespace detail {
inline constexpr double kWellX[3] = {-1.0, 1.0, 0.0};
inline constexpr double kWellY[3] = {0.0, 0.0, 1.5};
inline constexpr double kWellSigma = 0.35;
inline constexpr double kQuartic = 0.1;
}  // namespace detail

inline double three_well_potential(const Vec& z) {
    const double x = z[0], y = z[1];
    const double inv2s2 = 1.0 / (2.0 * detail::kWellSigma * detail::kWellSigma);
    double d[3];
    double dmin = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 3; ++c) {
        const double dx = x - detail::kWellX[c], dy = y - detail::kWellY[c];
        d[c] = (dx * dx + dy * dy) * inv2s2;
        dmin = std::min(dmin, d[c]);
    }
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += std::exp(dmin - d[c]);
    return dmin - std::log(s) + detail::kQuartic * (x * x * x * x + y * y * y * y);
}

inline Vec three_well_force(const Vec& z) {
    const double x = z[0], y = z[1];
    const double inv_s2 = 1.0 / (detail::kWellSigma * detail::kWellSigma);
    double d[3];
    double dmin = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 3; ++c) {
        const double dx = x - detail::kWellX[c], dy = y - detail::kWellY[c];
        d[c] = (dx * dx + dy * dy) * 0.5 * inv_s2;
        dmin = std::min(dmin, d[c]);
    }
    double w[3], wsum = 0.0;
    for (int c = 0; c < 3; ++c) {
        w[c] = std::exp(dmin - d[c]);
        wsum += w[c];
    }
    double gx = 0.0, gy = 0.0;  // gradient of the mixture free energy
    for (int c = 0; c < 3; ++c) {
        const double wc = w[c] / wsum;
        gx += wc * (x - detail::kWellX[c]) * inv_s2;
        gy += wc * (y - detail::kWellY[c]) * inv_s2;
    }
    gx += 4.0 * detail::kQuartic * x * x * x;
    gy += 4.0 * detail::kQuartic * y * y * y;
    return Vec{-gx, -gy};
}

// --------------------------------------------------------------------------
// Observation warp. x' depends on x alone and is strictly monotone; y' adds
// x-dependent shear, including an even component so the warped coordinates
// are not an affine function of the originals. Jacobian determinant is
// 1 + 1.2 x^2 > 0 everywhere.

inline Vec warp(const Vec& z) {
    const double x = z[0], y = z[1];
    return Vec{x + 0.4 * x * x * x, y + 0.5 * std::sin(2.0 * x) + 1.5 * x * x};
}

inline Vec unwarp(const Vec& w) {
    const double xp = w[0], yp = w[1];
    // Safeguarded Newton solve of x + 0.4 x^3 = xp; the cubic is monotone.
    double lo = -std::abs(xp) - 1.0, hi = std::abs(xp) + 1.0;
    double x = xp;
    for (int it = 0; it < 100; ++it) {
        const double g = x + 0.4 * x * x * x - xp;
        if (std::abs(g) < 1e-14) break;
        (g > 0.0 ? hi : lo) = x;
        const double step = g / (1.0 + 1.2 * x * x);
        x -= step;
        if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
    }
    return Vec{x, yp - 0.5 * std::sin(2.0 * x) - 1.5 * x * x};
}

// --------------------------------------------------------------------------
// Datasets

struct GroundTruthDataset {
    Trajectory observations;
    Trajectory factors;
    nlohmann::json descriptor;
};

inline void save_dataset(const GroundTruthDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_trajectory(ds.observations, dir + "/observations.traj");
    save_trajectory(ds.factors, dir + "/factors.traj");
    std::ofstream out(dir + "/descriptor.json");
    if (!out) throw std::runtime_error("cannot write dataset descriptor in " + dir);
    out << ds.descriptor.dump(2) << '\n';
}

inline GroundTruthDataset load_dataset(const std::string& dir) {
    GroundTruthDataset ds;
    ds.observations = load_trajectory(dir + "/observations.traj");
    ds.factors = load_trajectory(dir + "/factors.traj");
    std::ifstream in(dir + "/descriptor.json");
    if (!in) throw std::runtime_error("cannot read dataset descriptor in " + dir);
    ds.descriptor = nlohmann::json::parse(in);
    if (ds.observations.frames() != ds.factors.frames())
        throw std::runtime_error("dataset frame counts disagree in " + dir);
    return ds;
}

/// Overdamped dynamics in the three-well potential (unit diffusion),
/// observed through the warp. Factors hold the unwarped coordinates.
inline GroundTruthDataset gen_three_well(std::size_t n_frames, double dt_sim, int stride,
                                         std::uint64_t seed) {
    Rng rng(seed);
    SimOptions opt;
    opt.dt_sim = dt_sim;
    opt.stride = stride;
    opt.n_frames = n_frames;
    opt.box_half_width = 10.0;  // quartic confinement keeps |z| near 2

    GroundTruthDataset ds;
    ds.factors = simulate(Vec{-1.0, 0.0}, three_well_force, Vec{1.0, 1.0}, opt, rng);
    ds.observations.dims = 2;
    ds.observations.lag = ds.factors.lag;
    ds.observations.data.reserve(ds.factors.data.size());
    for (std::size_t i = 0; i < ds.factors.frames(); ++i) {
        const auto f = ds.factors.frame(i);
        const Vec w = warp(Vec{f[0], f[1]});
        ds.observations.data.insert(ds.observations.data.end(), w.begin(), w.end());
    }
    ds.descriptor = {{"name", "three-well"},
                     {"seed", seed},
                     {"frames", n_frames},
                     {"params", {{"dt_sim", dt_sim}, {"stride", stride}}}};
    return ds;
}

// --------------------------------------------------------------------------
// Sprite images

enum class Factor { scale, x_pos, y_pos };

inline std::string factor_name(Factor f) {
    switch (f) {
        case Factor::scale: return "scale";
        case Factor::x_pos: return "x_pos";
        default: return "y_pos";
    }
}

/// One reflection step onto [0,1]; repeated folding handles large excursions.
inline double reflect_unit(double x) {
    while (x < 0.0 || x > 1.0) {
        if (x < 0.0) x = -x;
        if (x > 1.0) x = 2.0 - x;
    }
    return x;
}

/// Gaussian random walk on [0,1] with reflecting boundaries; the stationary
/// distribution is uniform. Returns n values starting at x0.
inline Vec reflected_walk(double x0, double step_sigma, std::size_t n, Rng& rng) {
    Vec out;
    out.reserve(n);
    double x = reflect_unit(x0);
    out.push_back(x);
    for (std::size_t i = 1; i < n; ++i) {
        x = reflect_unit(x + step_sigma * rng.normal());
        out.push_back(x);
    }
    return out;
}

/// Renders a filled axis-aligned square by exact pixel-coverage integration.
/// factors = (scale, x_pos, y_pos), each in [0,1]. The side length runs from
/// 25% to 55% of the image; the margin keeps every square fully inside.
inline Vec render_sprite(double scale, double x_pos, double y_pos, int image_size) {
    if (image_size < 16) throw std::invalid_argument("render_sprite: image_size must be >= 16");
    const double s = static_cast<double>(image_size);
    const double side = (0.25 + 0.3 * scale) * s;
    const double margin = 0.5 * 0.55 * s;
    const double cx = margin + x_pos * (s - 2.0 * margin);
    const double cy = margin + y_pos * (s - 2.0 * margin);
    const double x0 = cx - 0.5 * side, x1 = cx + 0.5 * side;
    const double y0 = cy - 0.5 * side, y1 = cy + 0.5 * side;

    Vec img(static_cast<std::size_t>(image_size) * image_size, 0.0);
    const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int px1 = std::min(image_size - 1, static_cast<int>(std::floor(x1)));
    const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int py1 = std::min(image_size - 1, static_cast<int>(std::floor(y1)));
    for (int py = py0; py <= py1; ++py) {
        const double cy_cov = std::min<double>(py + 1, y1) - std::max<double>(py, y0);
        if (cy_cov <= 0.0) continue;
        for (int px = px0; px <= px1; ++px) {
            const double cx_cov = std::min<double>(px + 1, x1) - std::max<double>(px, x0);
            if (cx_cov <= 0.0) continue;
            img[static_cast<std::size_t>(py) * image_size + px] = cx_cov * cy_cov;
        }
    }
    return img;
}

/// Random-walk sprite dataset. Factors listed in `moving` follow reflected
/// walks from 0.5; the rest stay at 0.5. Factor columns appear in `moving`
/// order; observations are the flattened images. Unit lag.
inline GroundTruthDataset gen_sprite_walk(const std::vector<Factor>& moving,
                                          std::size_t n_frames, double step_sigma,
                                          int image_size, std::uint64_t seed) {
    if (moving.empty()) throw std::invalid_argument("gen_sprite_walk: no moving factors");
    if (!(step_sigma > 0.0)) throw std::invalid_argument("gen_sprite_walk: step_sigma must be > 0");
    if (n_frames < 2) throw std::invalid_argument("gen_sprite_walk: need at least 2 frames");
    Rng rng(seed);
    std::vector<Vec> walks;
    for (std::size_t f = 0; f < moving.size(); ++f) {
        Rng stream = rng.fork(f);
        walks.push_back(reflected_walk(0.5, step_sigma, n_frames, stream));
    }

    GroundTruthDataset ds;
    ds.factors.dims = static_cast<int>(moving.size());
    ds.factors.lag = 1.0;
    ds.factors.data.resize(n_frames * moving.size());
    ds.observations.dims = image_size * image_size;
    ds.observations.lag = 1.0;
    ds.observations.data.reserve(n_frames * static_cast<std::size_t>(image_size) * image_size);
    for (std::size_t t = 0; t < n_frames; ++t) {
        double scale = 0.5, x_pos = 0.5, y_pos = 0.5;
        for (std::size_t f = 0; f < moving.size(); ++f) {
            ds.factors.data[t * moving.size() + f] = walks[f][t];
            switch (moving[f]) {
                case Factor::scale: scale = walks[f][t]; break;
                case Factor::x_pos: x_pos = walks[f][t]; break;
                case Factor::y_pos: y_pos = walks[f][t]; break;
            }
        }
        const Vec img = render_sprite(scale, x_pos, y_pos, image_size);
        ds.observations.data.insert(ds.observations.data.end(), img.begin(), img.end());
    }
    std::vector<std::string> names;
    for (Factor f : moving) names.push_back(factor_name(f));
    ds.descriptor = {{"name", "sprite" + std::to_string(moving.size())},
                     {"seed", seed},
                     {"frames", n_frames},
                     {"params",
                      {{"step_sigma", step_sigma},
                       {"image_size", image_size},
                       {"factors", names}}}};
    return ds;
}

}  // namespace dynae
