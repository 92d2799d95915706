// Frame-major trajectory container and its on-disk formats: a one-line text
// header followed by little-endian 64-bit floats, plus a CSV export mirror.
#pragma once

#include <bit>
#include <charconv>
#include <fstream>
#include <string>
#include <system_error>

#include "dynae/core.hpp"

namespace dynae {

struct Trajectory {
    int dims = 0;
    double lag = 1.0;  // time between consecutive recorded frames
    Vec data;          // frame-major, frames() x dims

    std::size_t frames() const { return dims > 0 ? data.size() / dims : 0; }
    std::span<const double> frame(std::size_t i) const {
        return {data.data() + i * dims, static_cast<std::size_t>(dims)};
    }
    std::span<double> frame(std::size_t i) {
        return {data.data() + i * dims, static_cast<std::size_t>(dims)};
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline const char* expect_token(const char* p, const char* end, const std::string& tok,
                                const std::string& path) {
    if (static_cast<std::size_t>(end - p) < tok.size() ||
        std::string_view(p, tok.size()) != tok)
        throw std::runtime_error("malformed trajectory header in " + path);
    return p + tok.size();
}

}  // namespace detail

static_assert(std::endian::native == std::endian::little,
              "trajectory format is little-endian");

inline void save_trajectory(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open trajectory for writing: " + path);
    out << "dynae-traj v1, dims=" << traj.dims << ", frames=" << traj.frames()
        << ", lag=" << detail::format_double(traj.lag) << '\n';
    out.write(reinterpret_cast<const char*>(traj.data.data()),
              static_cast<std::streamsize>(traj.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("trajectory write failed: " + path);
}

inline Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open trajectory: " + path);
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("trajectory missing header: " + path);

    const char* p = header.data();
    const char* end = p + header.size();
    p = detail::expect_token(p, end, "dynae-traj v1, dims=", path);
    int dims = 0;
    auto r1 = std::from_chars(p, end, dims);
    if (r1.ec != std::errc{} || dims <= 0)
        throw std::runtime_error("malformed trajectory header in " + path);
    p = detail::expect_token(r1.ptr, end, ", frames=", path);
    std::size_t frames = 0;
    auto r2 = std::from_chars(p, end, frames);
    if (r2.ec != std::errc{})
        throw std::runtime_error("malformed trajectory header in " + path);
    p = detail::expect_token(r2.ptr, end, ", lag=", path);
    double lag = 0.0;
    auto r3 = std::from_chars(p, end, lag);
    if (r3.ec != std::errc{} || r3.ptr != end || !(lag > 0.0))
        throw std::runtime_error("malformed trajectory header in " + path);

    Trajectory traj;
    traj.dims = dims;
    traj.lag = lag;
    traj.data.resize(frames * static_cast<std::size_t>(dims));
    in.read(reinterpret_cast<char*>(traj.data.data()),
            static_cast<std::streamsize>(traj.data.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != traj.data.size() * sizeof(double))
        throw std::runtime_error("trajectory data truncated in " + path);
    return traj;
}

/// Plain numeric CSV, one frame per row, shortest round-trip formatting.
inline void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open CSV for writing: " + path);
    for (std::size_t i = 0; i < traj.frames(); ++i) {
        const auto f = traj.frame(i);
        for (int j = 0; j < traj.dims; ++j) {
            if (j) out << ',';
            out << detail::format_double(f[j]);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("CSV write failed: " + path);
}

}  // namespace dynae
