// Fully connected networks with reverse-mode gradients, an extended backward
// pass for losses that involve the network's input Jacobian, Adam updates,
// gradient checking, and checkpoint I/O.
//
// Parameter packing per layer k: weight matrix (dims[k+1] x dims[k], row-major)
// followed by the bias vector. The last layer always has identity activation.
#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "dynae/core.hpp"

namespace dynae {

enum class Activation { relu, tanh };

inline std::string activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation: " + s);
}

inline std::size_t param_count(const std::vector<int>& dims) {
    std::size_t n = 0;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k)
        n += static_cast<std::size_t>(dims[k]) * dims[k + 1] + dims[k + 1];
    return n;
}

struct FeedForwardNet {
    std::vector<int> dims;  // layer sizes, at least {in, out}
    Activation act = Activation::relu;
    Vec params;

    int in_dim() const { return dims.front(); }
    int out_dim() const { return dims.back(); }
    std::size_t n_layers() const { return dims.size() - 1; }

    std::size_t weight_offset(std::size_t layer) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < layer; ++k)
            off += static_cast<std::size_t>(dims[k]) * dims[k + 1] + dims[k + 1];
        return off;
    }

    std::span<const double> weights(std::size_t layer) const {
        return {params.data() + weight_offset(layer),
                static_cast<std::size_t>(dims[layer]) * dims[layer + 1]};
    }
    std::span<const double> biases(std::size_t layer) const {
        const std::size_t w = static_cast<std::size_t>(dims[layer]) * dims[layer + 1];
        return {params.data() + weight_offset(layer) + w,
                static_cast<std::size_t>(dims[layer + 1])};
    }
};

inline FeedForwardNet make_net(std::vector<int> dims, Activation act) {
    if (dims.size() < 2) throw std::invalid_argument("net needs at least two layer dims");
    for (int d : dims)
        if (d <= 0) throw std::invalid_argument("layer dims must be positive");
    FeedForwardNet net;
    net.dims = std::move(dims);
    net.act = act;
    net.params.assign(param_count(net.dims), 0.0);
    return net;
}

/// Weights uniform in +-sqrt(6/(d_in+d_out)), biases zero.
inline void init_net(FeedForwardNet& net, Rng& rng) {
    std::fill(net.params.begin(), net.params.end(), 0.0);
    for (std::size_t k = 0; k < net.n_layers(); ++k) {
        const double bound = std::sqrt(6.0 / (net.dims[k] + net.dims[k + 1]));
        double* w = net.params.data() + net.weight_offset(k);
        const std::size_t nw = static_cast<std::size_t>(net.dims[k]) * net.dims[k + 1];
        for (std::size_t i = 0; i < nw; ++i) w[i] = bound * (2.0 * rng.uniform() - 1.0);
    }
}

namespace detail {

inline double act_value(Activation a, double u) {
    return a == Activation::relu ? (u > 0.0 ? u : 0.0) : std::tanh(u);
}
// First derivative from the pre-activation; for tanh uses the cached value a.
inline double act_deriv(Activation act, double u, double a) {
    return act == Activation::relu ? (u > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}
inline double act_second_deriv(Activation act, double /*u*/, double a) {
    return act == Activation::relu ? 0.0 : -2.0 * a * (1.0 - a * a);
}

}  // namespace detail

/// Activations recorded during a forward pass; consumed by the backward passes.
struct ForwardCache {
    Vec input;
    std::vector<Vec> pre;   // pre-activation per layer
    std::vector<Vec> post;  // activation per layer (post.back() is the output)

    const Vec& layer_input(std::size_t k) const { return k == 0 ? input : post[k - 1]; }
    const Vec& output() const { return post.back(); }
};

inline void mlp_forward_cached(const FeedForwardNet& net, std::span<const double> x,
                               ForwardCache& cache) {
    if (static_cast<int>(x.size()) != net.in_dim())
        throw std::invalid_argument("mlp_forward: input dim " + std::to_string(x.size()) +
                                    " != " + std::to_string(net.in_dim()));
    const std::size_t L = net.n_layers();
    cache.input.assign(x.begin(), x.end());
    cache.pre.resize(L);
    cache.post.resize(L);
    for (std::size_t k = 0; k < L; ++k) {
        const std::size_t out = net.dims[k + 1];
        cache.pre[k].resize(out);
        cache.post[k].resize(out);
        affine_map(net.weights(k), net.biases(k), cache.layer_input(k), cache.pre[k]);
        if (k + 1 < L) {
            for (std::size_t i = 0; i < out; ++i)
                cache.post[k][i] = detail::act_value(net.act, cache.pre[k][i]);
        } else {
            cache.post[k] = cache.pre[k];
        }
    }
}

inline Vec mlp_forward(const FeedForwardNet& net, std::span<const double> x) {
    ForwardCache cache;
    mlp_forward_cached(net, x, cache);
    return cache.output();
}

/// Accumulates d(upstream . output)/d(params) into grads (packed like params)
/// and returns d(upstream . output)/d(input).
inline Vec mlp_backward_cached(const FeedForwardNet& net, const ForwardCache& cache,
                               std::span<const double> upstream, Vec& grads) {
    if (static_cast<int>(upstream.size()) != net.out_dim())
        throw std::invalid_argument("mlp_backward: upstream dim mismatch");
    if (grads.size() != net.params.size())
        throw std::invalid_argument("mlp_backward: grad buffer size mismatch");
    const std::size_t L = net.n_layers();
    Vec bar_a(upstream.begin(), upstream.end());
    Vec bar_u;
    for (std::size_t k = L; k-- > 0;) {
        const std::size_t out = net.dims[k + 1];
        bar_u.assign(bar_a.begin(), bar_a.end());
        if (k + 1 < L) {
            for (std::size_t i = 0; i < out; ++i)
                bar_u[i] *= detail::act_deriv(net.act, cache.pre[k][i], cache.post[k][i]);
        }
        const std::size_t off = net.weight_offset(k);
        const std::size_t nw = static_cast<std::size_t>(net.dims[k]) * out;
        outer_add({grads.data() + off, nw}, bar_u, cache.layer_input(k));
        double* gb = grads.data() + off + nw;
        for (std::size_t i = 0; i < out; ++i) gb[i] += bar_u[i];
        bar_a.assign(net.dims[k], 0.0);
        matvec_transpose_add(net.weights(k), bar_u, bar_a);
    }
    return bar_a;
}

inline std::pair<Vec, Vec> mlp_backward(const FeedForwardNet& net, std::span<const double> x,
                                        std::span<const double> upstream) {
    ForwardCache cache;
    mlp_forward_cached(net, x, cache);
    Vec grads(net.params.size(), 0.0);
    Vec input_grad = mlp_backward_cached(net, cache, upstream, grads);
    return {std::move(grads), std::move(input_grad)};
}

// ---------------------------------------------------------------------------
// Jacobian-extended passes.
//
// The forward pass additionally carries one tangent vector per input seed
// through the layer recurrence
//     s_k[j] = W_k t_{k-1}[j],   t_k[j] = act'(u_k) * s_k[j],
// so J(i,j) = t_{L-1}[j][i] is the exact input Jacobian of the network.
// The backward pass then propagates adjoints of both the output and the
// Jacobian to the parameters; the activation's second derivative enters
// through d t_k / d u_k = act''(u_k) * s_k.

struct JacobianCache {
    ForwardCache primal;
    // tangent[j][k] and tangent_pre[j][k]: t_k and s_k for input seed j
    std::vector<std::vector<Vec>> tangent, tangent_pre;
    Vec jac;  // out_dim x in_dim, row-major
};

inline void mlp_forward_jacobian(const FeedForwardNet& net, std::span<const double> x,
                                 JacobianCache& jc) {
    mlp_forward_cached(net, x, jc.primal);
    const std::size_t L = net.n_layers();
    const std::size_t din = net.in_dim(), dout = net.out_dim();
    jc.tangent.assign(din, std::vector<Vec>(L));
    jc.tangent_pre.assign(din, std::vector<Vec>(L));
    jc.jac.assign(dout * din, 0.0);
    Vec seed(din);
    for (std::size_t j = 0; j < din; ++j) {
        std::fill(seed.begin(), seed.end(), 0.0);
        seed[j] = 1.0;
        const Vec* t_prev = &seed;
        for (std::size_t k = 0; k < L; ++k) {
            const std::size_t out = net.dims[k + 1];
            Vec& s = jc.tangent_pre[j][k];
            Vec& t = jc.tangent[j][k];
            s.assign(out, 0.0);
            const std::size_t cols = net.dims[k];
            std::span<const double> w = net.weights(k);
            for (std::size_t r = 0; r < out; ++r) {
                const double* wr = w.data() + r * cols;
                double acc = 0.0;
                for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * (*t_prev)[c];
                s[r] = acc;
            }
            t = s;
            if (k + 1 < L) {
                for (std::size_t i = 0; i < out; ++i)
                    t[i] *= detail::act_deriv(net.act, jc.primal.pre[k][i], jc.primal.post[k][i]);
            }
            t_prev = &t;
        }
        for (std::size_t i = 0; i < dout; ++i) jc.jac[i * din + j] = jc.tangent[j][L - 1][i];
    }
}

/// Accumulates d(bar_y . y + sum_ij bar_jac(i,j) J(i,j))/d(params) into grads.
inline void mlp_backward_jacobian(const FeedForwardNet& net, const JacobianCache& jc,
                                  std::span<const double> bar_y, std::span<const double> bar_jac,
                                  Vec& grads) {
    const std::size_t L = net.n_layers();
    const std::size_t din = net.in_dim(), dout = net.out_dim();
    if (bar_y.size() != dout || bar_jac.size() != dout * din)
        throw std::invalid_argument("mlp_backward_jacobian: adjoint dim mismatch");
    if (grads.size() != net.params.size())
        throw std::invalid_argument("mlp_backward_jacobian: grad buffer size mismatch");

    Vec bar_a(bar_y.begin(), bar_y.end());
    std::vector<Vec> bar_t(din, Vec(dout));
    for (std::size_t j = 0; j < din; ++j)
        for (std::size_t i = 0; i < dout; ++i) bar_t[j][i] = bar_jac[i * din + j];

    Vec bar_u, bar_s;
    Vec seed(din);
    for (std::size_t k = L; k-- > 0;) {
        const std::size_t out = net.dims[k + 1];
        const bool hidden = (k + 1 < L);
        bar_u.assign(bar_a.begin(), bar_a.end());
        if (hidden) {
            for (std::size_t i = 0; i < out; ++i) {
                const double d1 = detail::act_deriv(net.act, jc.primal.pre[k][i], jc.primal.post[k][i]);
                const double d2 =
                    detail::act_second_deriv(net.act, jc.primal.pre[k][i], jc.primal.post[k][i]);
                double cross = 0.0;
                for (std::size_t j = 0; j < din; ++j)
                    cross += jc.tangent_pre[j][k][i] * bar_t[j][i];
                bar_u[i] = bar_u[i] * d1 + d2 * cross;
            }
        }
        const std::size_t off = net.weight_offset(k);
        const std::size_t nw = static_cast<std::size_t>(net.dims[k]) * out;
        std::span<double> gw{grads.data() + off, nw};
        outer_add(gw, bar_u, jc.primal.layer_input(k));
        double* gb = grads.data() + off + nw;
        for (std::size_t i = 0; i < out; ++i) gb[i] += bar_u[i];

        Vec next_bar_a(net.dims[k], 0.0);
        matvec_transpose_add(net.weights(k), bar_u, next_bar_a);

        std::vector<Vec> next_bar_t(din, Vec(net.dims[k], 0.0));
        for (std::size_t j = 0; j < din; ++j) {
            bar_s.assign(bar_t[j].begin(), bar_t[j].end());
            if (hidden) {
                for (std::size_t i = 0; i < out; ++i)
                    bar_s[i] *= detail::act_deriv(net.act, jc.primal.pre[k][i], jc.primal.post[k][i]);
            }
            const Vec* t_prev;
            if (k == 0) {
                std::fill(seed.begin(), seed.end(), 0.0);
                seed[j] = 1.0;
                t_prev = &seed;
            } else {
                t_prev = &jc.tangent[j][k - 1];
            }
            outer_add(gw, bar_s, *t_prev);
            matvec_transpose_add(net.weights(k), bar_s, next_bar_t[j]);
        }
        bar_a = std::move(next_bar_a);
        bar_t = std::move(next_bar_t);
    }
}

/// FNV-1a hash of the ReLU on/off pattern; used to detect kink crossings
/// when finite-differencing. Tanh contributes nothing.
inline std::uint64_t activation_pattern_hash(const FeedForwardNet& net,
                                             const ForwardCache& cache) {
    if (net.act != Activation::relu) return 0;
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t k = 0; k + 1 < net.n_layers(); ++k)
        for (double u : cache.pre[k]) {
            h ^= (u > 0.0) ? 0x9eULL : 0x31ULL;
            h *= 1099511628211ULL;
        }
    return h;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    Vec m, v;
    std::uint64_t step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

inline AdamState make_adam(std::size_t n_params, double learning_rate = 1e-3) {
    AdamState s;
    s.m.assign(n_params, 0.0);
    s.v.assign(n_params, 0.0);
    s.learning_rate = learning_rate;
    return s;
}

/// Standard Adam with bias correction. Non-finite gradients are rejected
/// before any state is touched.
inline void adam_step(Vec& params, const Vec& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (!all_finite(grads))
        throw std::runtime_error("adam_step: non-finite gradient");
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

/// One Adam step over two parameter vectors sharing a single optimizer state
/// (state length = |a| + |b|, step counter advanced once).
inline void adam_step_two(Vec& params_a, const Vec& grads_a, Vec& params_b, const Vec& grads_b,
                          AdamState& state) {
    if (params_a.size() != grads_a.size() || params_b.size() != grads_b.size() ||
        state.m.size() != params_a.size() + params_b.size())
        throw std::invalid_argument("adam_step_two: shape mismatch");
    if (!all_finite(grads_a) || !all_finite(grads_b))
        throw std::runtime_error("adam_step_two: non-finite gradient");
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    auto update = [&](Vec& params, const Vec& grads, std::size_t off) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::size_t s = off + i;
            state.m[s] = state.beta1 * state.m[s] + (1.0 - state.beta1) * grads[i];
            state.v[s] = state.beta2 * state.v[s] + (1.0 - state.beta2) * grads[i] * grads[i];
            params[i] -= state.learning_rate * (state.m[s] / c1) /
                         (std::sqrt(state.v[s] / c2) + state.epsilon);
        }
    };
    update(params_a, grads_a, 0);
    update(params_b, grads_b, params_a.size());
}

// ---------------------------------------------------------------------------
// Gradient checking

struct FdReport {
    bool pass = false;
    double max_rel_error = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> flagged;  // coordinates straddling a ReLU kink
    std::string note;
};

/// Loss over the network output: value plus gradient w.r.t. the output.
using LossWithGrad = std::function<std::pair<double, Vec>(const Vec&)>;

/// Compares the reverse-mode gradient of loss(mlp_forward(net, x)) w.r.t. all
/// parameters against central finite differences. Coordinates whose
/// perturbation flips a ReLU unit are flagged and excluded from pass/fail.
inline FdReport finite_diff_check(const FeedForwardNet& net, const Vec& x,
                                  const LossWithGrad& loss, double h, double tol) {
    if (h <= 0.0 || tol <= 0.0) throw std::invalid_argument("finite_diff_check: h, tol > 0");
    FdReport report;

    ForwardCache cache;
    mlp_forward_cached(net, x, cache);
    auto [value, upstream] = loss(cache.output());
    if (!std::isfinite(value)) {
        report.note = "non-finite loss at base point";
        return report;
    }
    Vec analytic(net.params.size(), 0.0);
    mlp_backward_cached(net, cache, upstream, analytic);

    FeedForwardNet probe = net;
    const double abs_floor = 1e-7;
    double max_err = 0.0;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        probe.params[i] = net.params[i] + h;
        ForwardCache cp;
        mlp_forward_cached(probe, x, cp);
        const double fp = loss(cp.output()).first;
        const std::uint64_t hash_p = activation_pattern_hash(probe, cp);
        probe.params[i] = net.params[i] - h;
        mlp_forward_cached(probe, x, cp);
        const double fm = loss(cp.output()).first;
        const std::uint64_t hash_m = activation_pattern_hash(probe, cp);
        probe.params[i] = net.params[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            report.note = "non-finite loss during probing";
            return report;
        }
        if (hash_p != hash_m) {
            report.flagged.push_back(i);
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double diff = std::abs(analytic[i] - numeric);
        const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor / tol});
        max_err = std::max(max_err, diff / scale);
    }
    report.max_rel_error = max_err;
    report.pass = max_err < tol;
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON manifest line, then the parameters as raw
// little-endian 32-bit floats in packing order.

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

inline void save_checkpoint(const FeedForwardNet& net, std::uint64_t seed,
                            const std::string& path) {
    nlohmann::json manifest;
    manifest["format"] = "dynae-net v1";
    manifest["layer_dims"] = net.dims;
    std::vector<std::string> names;
    for (std::size_t k = 0; k + 1 < net.n_layers(); ++k) names.push_back(activation_name(net.act));
    names.push_back("identity");
    manifest["activations"] = names;
    manifest["seed"] = seed;
    manifest["param_count"] = net.params.size();
    manifest["dtype"] = "f32-le";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << manifest.dump() << '\n';
    std::vector<float> block(net.params.begin(), net.params.end());
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

struct Checkpoint {
    FeedForwardNet net;
    std::uint64_t seed = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint missing manifest: " + path);
    nlohmann::json manifest = nlohmann::json::parse(line);
    if (manifest.at("format").get<std::string>() != "dynae-net v1")
        throw std::runtime_error("unsupported checkpoint format in " + path);

    Checkpoint ck;
    std::vector<int> dims = manifest.at("layer_dims").get<std::vector<int>>();
    const auto names = manifest.at("activations").get<std::vector<std::string>>();
    if (names.size() != dims.size() - 1 || names.back() != "identity")
        throw std::runtime_error("checkpoint activation list malformed in " + path);
    const Activation act =
        names.size() > 1 ? activation_from_name(names.front()) : Activation::relu;
    ck.net = make_net(std::move(dims), act);
    ck.seed = manifest.at("seed").get<std::uint64_t>();

    const std::size_t n = manifest.at("param_count").get<std::size_t>();
    if (n != ck.net.params.size())
        throw std::runtime_error("checkpoint param count mismatch in " + path);
    std::vector<float> block(n);
    in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
        throw std::runtime_error("checkpoint parameter block truncated in " + path);
    std::copy(block.begin(), block.end(), ck.net.params.begin());
    return ck;
}

}  // namespace dynae
