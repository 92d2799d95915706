#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dynae/datagen.hpp"

using namespace dynae;

TEST_CASE("force vanishes at well bottoms once confinement is subtracted") {
    const double wx[3] = {-1.0, 1.0, 0.0};
    const double wy[3] = {0.0, 0.0, 1.5};
    for (int c = 0; c < 3; ++c) {
        const Vec f = three_well_force(Vec{wx[c], wy[c]});
        const double gx = f[0] + 0.4 * wx[c] * wx[c] * wx[c];
        const double gy = f[1] + 0.4 * wy[c] * wy[c] * wy[c];
        REQUIRE(std::sqrt(gx * gx + gy * gy) < 0.15);
    }
}

TEST_CASE("force is antisymmetric in x across the midline") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const double x = 3.0 * (rng.uniform() - 0.5), y = 3.0 * (rng.uniform() - 0.5);
        const Vec fp = three_well_force(Vec{x, y});
        const Vec fm = three_well_force(Vec{-x, y});
        REQUIRE(fm[0] == Catch::Approx(-fp[0]).margin(1e-12));
        REQUIRE(fm[1] == Catch::Approx(fp[1]).margin(1e-12));
    }
}

TEST_CASE("force matches the numeric gradient of the potential") {
    Rng rng(2);
    const double h = 1e-5;
    for (int i = 0; i < 200; ++i) {
        const double x = 4.0 * (rng.uniform() - 0.5), y = 4.0 * (rng.uniform() - 0.5);
        const Vec f = three_well_force(Vec{x, y});
        const double fx = -(three_well_potential(Vec{x + h, y}) -
                            three_well_potential(Vec{x - h, y})) / (2.0 * h);
        const double fy = -(three_well_potential(Vec{x, y + h}) -
                            three_well_potential(Vec{x, y - h})) / (2.0 * h);
        REQUIRE(f[0] == Catch::Approx(fx).margin(1e-6));
        REQUIRE(f[1] == Catch::Approx(fy).margin(1e-6));
    }
}

TEST_CASE("warp fixes the origin") {
    const Vec w = warp(Vec{0.0, 0.0});
    REQUIRE(w[0] == 0.0);
    REQUIRE(w[1] == 0.0);
}

TEST_CASE("unwarp inverts warp to high precision") {
    Rng rng(3);
    double max_err = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const Vec z{2.0 * rng.normal(), 2.0 * rng.normal()};
        const Vec back = unwarp(warp(z));
        max_err = std::max({max_err, std::abs(back[0] - z[0]), std::abs(back[1] - z[1])});
    }
    REQUIRE(max_err < 1e-10);
}

TEST_CASE("warp preserves orientation everywhere sampled") {
    Rng rng(4);
    const double h = 1e-6;
    for (int i = 0; i < 200; ++i) {
        const double x = 5.0 * (rng.uniform() - 0.5), y = 5.0 * (rng.uniform() - 0.5);
        const Vec px = warp(Vec{x + h, y}), mx = warp(Vec{x - h, y});
        const Vec py = warp(Vec{x, y + h}), my = warp(Vec{x, y - h});
        const double j00 = (px[0] - mx[0]) / (2 * h), j01 = (py[0] - my[0]) / (2 * h);
        const double j10 = (px[1] - mx[1]) / (2 * h), j11 = (py[1] - my[1]) / (2 * h);
        REQUIRE(j00 * j11 - j01 * j10 > 0.0);
    }
}

TEST_CASE("three-well trajectories visit every well") {
    const GroundTruthDataset ds = gen_three_well(50000, 0.01, 5, 2024);
    REQUIRE(ds.factors.frames() == 50000);
    REQUIRE(ds.observations.frames() == 50000);
    REQUIRE(ds.factors.lag == Catch::Approx(0.05));

    const double wx[3] = {-1.0, 1.0, 0.0};
    const double wy[3] = {0.0, 0.0, 1.5};
    std::size_t occ[3] = {0, 0, 0};
    for (std::size_t i = 0; i < ds.factors.frames(); ++i) {
        const auto f = ds.factors.frame(i);
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < 3; ++c) {
            const double dx = f[0] - wx[c], dy = f[1] - wy[c];
            if (dx * dx + dy * dy < bd) {
                bd = dx * dx + dy * dy;
                best = c;
            }
        }
        occ[best] += 1;
    }
    for (int c = 0; c < 3; ++c)
        REQUIRE(static_cast<double>(occ[c]) / ds.factors.frames() > 0.05);
}

TEST_CASE("three-well observations are the warped factors frame by frame") {
    const GroundTruthDataset ds = gen_three_well(500, 0.01, 5, 7);
    for (std::size_t i = 0; i < ds.factors.frames(); ++i) {
        const auto f = ds.factors.frame(i);
        const Vec w = warp(Vec{f[0], f[1]});
        REQUIRE(ds.observations.frame(i)[0] == w[0]);
        REQUIRE(ds.observations.frame(i)[1] == w[1]);
    }
    const GroundTruthDataset again = gen_three_well(500, 0.01, 5, 7);
    REQUIRE(again.factors.data == ds.factors.data);
    REQUIRE(again.observations.data == ds.observations.data);
}

TEST_CASE("warped displacements show position-dependent apparent diffusion") {
    const GroundTruthDataset ds = gen_three_well(20000, 0.01, 5, 99);
    // Collect (x', dx') and bin by x' decile.
    std::vector<std::pair<double, double>> samples;
    for (std::size_t i = 0; i + 1 < ds.observations.frames(); ++i)
        samples.push_back({ds.observations.frame(i)[0],
                           ds.observations.frame(i + 1)[0] - ds.observations.frame(i)[0]});
    std::vector<double> xs;
    for (const auto& s : samples) xs.push_back(s.first);
    std::sort(xs.begin(), xs.end());
    double lo_var = std::numeric_limits<double>::infinity(), hi_var = 0.0;
    for (int dec = 0; dec < 10; ++dec) {
        const double lo = xs[static_cast<std::size_t>(dec * 0.1 * xs.size())];
        const double hi = dec == 9 ? xs.back() + 1.0
                                   : xs[static_cast<std::size_t>((dec + 1) * 0.1 * xs.size())];
        double sum = 0.0, sum2 = 0.0;
        std::size_t n = 0;
        for (const auto& s : samples)
            if (s.first >= lo && s.first < hi) {
                sum += s.second;
                sum2 += s.second * s.second;
                ++n;
            }
        const double var = sum2 / n - (sum / n) * (sum / n);
        lo_var = std::min(lo_var, var);
        hi_var = std::max(hi_var, var);
    }
    REQUIRE(hi_var / lo_var >= 2.0);
}

TEST_CASE("sprite centered factors give a centered centroid") {
    const int s = 16;
    const Vec img = render_sprite(0.5, 0.5, 0.5, s);
    double mass = 0.0, mx = 0.0, my = 0.0;
    for (int py = 0; py < s; ++py)
        for (int px = 0; px < s; ++px) {
            const double v = img[py * s + px];
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
            mass += v;
            mx += v * (px + 0.5);
            my += v * (py + 0.5);
        }
    REQUIRE(mass > 0.0);
    REQUIRE(mx / mass == Catch::Approx(s / 2.0).margin(0.5));
    REQUIRE(my / mass == Catch::Approx(s / 2.0).margin(0.5));
}

TEST_CASE("sprite squares stay inside the image at extreme factors") {
    for (double scale : {0.0, 1.0})
        for (double x : {0.0, 1.0})
            for (double y : {0.0, 1.0}) {
                const Vec img = render_sprite(scale, x, y, 16);
                double mass = 0.0;
                for (double v : img) mass += v;
                const double side = (0.25 + 0.3 * scale) * 16.0;
                REQUIRE(mass == Catch::Approx(side * side).margin(1e-9));
            }
}

TEST_CASE("reflected walks stay inside the unit interval") {
    Rng rng(5);
    const Vec walk = reflected_walk(0.5, 0.25, 20000, rng);
    for (double x : walk) {
        REQUIRE(x >= 0.0);
        REQUIRE(x <= 1.0);
    }
}

TEST_CASE("reflected walk marginals are uniform over deciles") {
    Rng rng(6);
    const Vec walk = reflected_walk(0.5, 0.1, 1000000, rng);
    std::size_t counts[10] = {};
    for (double x : walk) {
        int d = static_cast<int>(x * 10.0);
        if (d == 10) d = 9;
        counts[d] += 1;
    }
    for (int d = 0; d < 10; ++d) {
        const double frac = static_cast<double>(counts[d]) / walk.size();
        REQUIRE(frac == Catch::Approx(0.1).margin(0.01));
    }
}

TEST_CASE("sprite dataset re-renders bit-exactly from its factors") {
    const GroundTruthDataset ds =
        gen_sprite_walk({Factor::x_pos, Factor::y_pos}, 500, 0.03, 16, 11);
    REQUIRE(ds.factors.dims == 2);
    REQUIRE(ds.observations.dims == 256);
    REQUIRE(ds.descriptor.at("name") == "sprite2");
    for (std::size_t t = 0; t < ds.factors.frames(); t += 37) {
        const auto f = ds.factors.frame(t);
        const Vec img = render_sprite(0.5, f[0], f[1], 16);
        const auto obs = ds.observations.frame(t);
        for (int i = 0; i < 256; ++i) REQUIRE(obs[i] == img[i]);
    }

    const GroundTruthDataset d3 =
        gen_sprite_walk({Factor::scale, Factor::x_pos, Factor::y_pos}, 100, 0.03, 16, 12);
    REQUIRE(d3.factors.dims == 3);
    REQUIRE(d3.descriptor.at("name") == "sprite3");
    const auto f0 = d3.factors.frame(50);
    const Vec img = render_sprite(f0[0], f0[1], f0[2], 16);
    const auto obs = d3.observations.frame(50);
    for (int i = 0; i < 256; ++i) REQUIRE(obs[i] == img[i]);
}

TEST_CASE("datasets round-trip through their three-file layout") {
    const GroundTruthDataset ds = gen_three_well(200, 0.01, 5, 3);
    save_dataset(ds, "ds_roundtrip");
    const GroundTruthDataset back = load_dataset("ds_roundtrip");
    REQUIRE(back.observations.data == ds.observations.data);
    REQUIRE(back.factors.data == ds.factors.data);
    REQUIRE(back.descriptor.at("name") == "three-well");
    REQUIRE(back.descriptor.at("seed").get<std::uint64_t>() == 3);

    // Mismatched frame counts must be rejected.
    Trajectory bad = ds.factors;
    bad.data.resize(bad.data.size() - 2 * bad.dims);
    save_trajectory(bad, "ds_roundtrip/factors.traj");
    REQUIRE_THROWS_AS(load_dataset("ds_roundtrip"), std::runtime_error);
    std::filesystem::remove_all("ds_roundtrip");
}
