// Overdamped Langevin machinery: Euler-Maruyama stepping, simulation, the
// learned transition prior (neural force field and diagonal diffusion), its
// log-density with exact parameter gradients, the binned prior loss, and
// constant-diffusion displacement sampling.
#pragma once

#include <sstream>

#include "dynae/net.hpp"
#include "dynae/trajectory.hpp"

namespace dynae {

inline constexpr double kDiffusionFloor = 1e-6;

/// Neural transition prior. The diffusion net's raw outputs pass through
/// softplus plus a small floor, so M_ii(z) > 0 always holds.
struct PriorModel {
    FeedForwardNet force_net;
    FeedForwardNet diffusion_net;

    int latent_dim() const { return force_net.in_dim(); }
};

inline PriorModel make_prior(int latent_dim, int hidden = 32, int n_hidden = 3) {
    std::vector<int> dims;
    dims.push_back(latent_dim);
    for (int k = 0; k < n_hidden; ++k) dims.push_back(hidden);
    dims.push_back(latent_dim);
    PriorModel prior;
    prior.force_net = make_net(dims, Activation::tanh);
    prior.diffusion_net = make_net(dims, Activation::tanh);
    return prior;
}

inline void init_prior(PriorModel& prior, Rng& rng) {
    init_net(prior.force_net, rng);
    init_net(prior.diffusion_net, rng);
}

/// Diagonal diffusion M_ii(z), strictly positive.
inline Vec prior_diffusion(const PriorModel& prior, const Vec& z) {
    Vec m = mlp_forward(prior.diffusion_net, z);
    for (double& v : m) v = softplus(v) + kDiffusionFloor;
    return m;
}

struct TransitionSample {
    Vec z;   // z_t
    Vec dz;  // z_{t+lag} - z_t
};

/// Mean displacement per unit lag under the full prior:
///   drift_i = M_ii(z) f_i(z) + dM_ii/dz_i
inline Vec prior_drift(const PriorModel& prior, const Vec& z) {
    const Vec f = mlp_forward(prior.force_net, z);
    JacobianCache jc;
    mlp_forward_jacobian(prior.diffusion_net, z, jc);
    const std::size_t d = z.size();
    Vec drift(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double y = jc.primal.output()[i];
        drift[i] = (softplus(y) + kDiffusionFloor) * f[i] + sigmoid(y) * jc.jac[i * d + i];
    }
    return drift;
}

/// One Euler-Maruyama displacement under diagonal diffusion:
///   dz_i = [M_ii(z) f_i(z) + dM_ii/dz_i] dt + sqrt(2 M_ii(z) dt) noise_i
template <class ForceF, class DiffF, class DiffGradF>
Vec em_step(const Vec& z, ForceF&& force, DiffF&& diff, DiffGradF&& diff_grad, double dt,
            const Vec& noise) {
    if (!(dt > 0.0)) throw std::invalid_argument("em_step: dt must be positive");
    const Vec f = force(z);
    const Vec m = diff(z);
    const Vec dm = diff_grad(z);
    if (f.size() != z.size() || m.size() != z.size() || dm.size() != z.size() ||
        noise.size() != z.size())
        throw std::invalid_argument("em_step: field dimension mismatch");
    Vec dz(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!(m[i] > 0.0)) throw std::invalid_argument("em_step: non-positive diffusion");
        dz[i] = (m[i] * f[i] + dm[i]) * dt + std::sqrt(2.0 * m[i] * dt) * noise[i];
    }
    return dz;
}

struct SimOptions {
    double dt_sim = 0.01;
    int stride = 1;
    std::size_t n_frames = 0;
    double box_half_width = 50.0;  // simulation aborts if any |z_i| exceeds this
};

/// Integrates the SDE with constant diagonal diffusion, recording every
/// `stride` sub-steps. Frame 0 is the initial state; the recorded lag is
/// stride * dt_sim.
template <class ForceF>
Trajectory simulate(const Vec& initial, ForceF&& force, const Vec& diffusion_diag,
                    const SimOptions& opt, Rng& rng) {
    if (opt.stride < 1) throw std::invalid_argument("simulate: stride must be >= 1");
    if (opt.n_frames < 2) throw std::invalid_argument("simulate: need at least 2 frames");
    if (diffusion_diag.size() != initial.size())
        throw std::invalid_argument("simulate: diffusion dimension mismatch");

    const int d = static_cast<int>(initial.size());
    Trajectory traj;
    traj.dims = d;
    traj.lag = opt.dt_sim * opt.stride;
    traj.data.reserve(opt.n_frames * d);
    traj.data.insert(traj.data.end(), initial.begin(), initial.end());

    auto diff = [&](const Vec&) { return diffusion_diag; };
    auto diff_grad = [&](const Vec&) { return Vec(initial.size(), 0.0); };
    Vec z = initial;
    Vec noise(initial.size());
    for (std::size_t frame = 1; frame < opt.n_frames; ++frame) {
        for (int s = 0; s < opt.stride; ++s) {
            rng.fill_normal(noise);
            const Vec dz = em_step(z, force, diff, diff_grad, opt.dt_sim, noise);
            for (int i = 0; i < d; ++i) z[i] += dz[i];
        }
        for (int i = 0; i < d; ++i)
            if (!(std::abs(z[i]) <= opt.box_half_width))
                throw std::runtime_error("simulate: trajectory left bounding box at frame " +
                                         std::to_string(frame));
        traj.data.insert(traj.data.end(), z.begin(), z.end());
    }
    return traj;
}

namespace detail {

// Shared scratch for prior density evaluation and its parameter gradients.
struct PriorEval {
    Vec f;         // force net output
    Vec m;         // softplus-floored diffusion
    Vec sig;       // sigmoid of raw diffusion output = dM/dy
    Vec dm;        // dM_ii/dz_i
    Vec residual;  // dz_i - M_ii f_i - dM_ii/dz_i
    ForwardCache force_fc;
    JacobianCache diff_jc;
    double log_density = 0.0;
};

inline void eval_prior(const PriorModel& prior, const TransitionSample& s, PriorEval& ev) {
    const std::size_t d = s.z.size();
    if (s.dz.size() != d || static_cast<int>(d) != prior.latent_dim())
        throw std::invalid_argument("prior_log_density: dimension mismatch");
    mlp_forward_cached(prior.force_net, s.z, ev.force_fc);
    ev.f = ev.force_fc.output();
    mlp_forward_jacobian(prior.diffusion_net, s.z, ev.diff_jc);
    const Vec& y = ev.diff_jc.primal.output();
    ev.m.resize(d);
    ev.sig.resize(d);
    ev.dm.resize(d);
    ev.residual.resize(d);
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        ev.sig[i] = sigmoid(y[i]);
        ev.m[i] = softplus(y[i]) + kDiffusionFloor;
        ev.dm[i] = ev.sig[i] * ev.diff_jc.jac[i * d + i];
        ev.residual[i] = s.dz[i] - ev.m[i] * ev.f[i] - ev.dm[i];
        acc += std::log(ev.m[i]) + ev.residual[i] * ev.residual[i] / (2.0 * ev.m[i]);
    }
    ev.log_density = -0.5 * acc;
    if (!std::isfinite(ev.log_density)) {
        std::ostringstream msg;
        msg << "prior_log_density: non-finite value at z=(";
        for (std::size_t i = 0; i < d; ++i) msg << (i ? "," : "") << s.z[i];
        msg << ") dz=(";
        for (std::size_t i = 0; i < d; ++i) msg << (i ? "," : "") << s.dz[i];
        msg << ")";
        throw std::runtime_error(msg.str());
    }
}

// Accumulates scale * d(log r)/d(omega) into the two gradient buffers.
inline void accumulate_prior_grads(const PriorModel& prior, const PriorEval& ev, double scale,
                                   Vec& force_grads, Vec& diff_grads) {
    const std::size_t d = ev.f.size();
    Vec bar_f(d), bar_y(d), bar_jac(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double c = ev.residual[i];
        const double m = ev.m[i];
        const double dldc = -c / (2.0 * m);
        const double dldm = -0.5 / m + c * c / (4.0 * m * m) + dldc * (-ev.f[i]);
        const double dldD = -dldc;                     // via residual only
        bar_f[i] = scale * dldc * (-m);                // d residual/d f_i = -M_ii
        bar_y[i] = scale * (dldm * ev.sig[i] +
                            dldD * ev.sig[i] * (1.0 - ev.sig[i]) * ev.diff_jc.jac[i * d + i]);
        bar_jac[i * d + i] = scale * dldD * ev.sig[i];
    }
    mlp_backward_cached(prior.force_net, ev.force_fc, bar_f, force_grads);
    mlp_backward_jacobian(prior.diffusion_net, ev.diff_jc, bar_y, bar_jac, diff_grads);
}

}  // namespace detail

/// Transition log-density as printed, with additive constants dropped:
///   -1/2 sum_i [ log M_ii(z) + (dz_i - M_ii f_i - dM_ii/dz_i)^2 / (2 M_ii(z)) ]
inline double prior_log_density(const PriorModel& prior, const TransitionSample& s) {
    detail::PriorEval ev;
    detail::eval_prior(prior, s, ev);
    return ev.log_density;
}

/// Negative mean log-density, averaged per bin and then across bins.
inline double prior_loss(const PriorModel& prior,
                         const std::vector<std::vector<TransitionSample>>& bins) {
    if (bins.empty()) throw std::invalid_argument("prior_loss: no bins");
    detail::PriorEval ev;
    double acc = 0.0;
    for (const auto& bin : bins) {
        if (bin.empty()) throw std::invalid_argument("prior_loss: empty bin group");
        double bin_acc = 0.0;
        for (const TransitionSample& s : bin) {
            detail::eval_prior(prior, s, ev);
            bin_acc += ev.log_density;
        }
        acc += bin_acc / static_cast<double>(bin.size());
    }
    return -acc / static_cast<double>(bins.size());
}

/// prior_loss plus its gradients w.r.t. the force and diffusion parameters.
/// Gradient buffers must be pre-sized; contributions are accumulated.
inline double prior_loss_grad(const PriorModel& prior,
                              const std::vector<std::vector<TransitionSample>>& bins,
                              Vec& force_grads, Vec& diff_grads) {
    if (bins.empty()) throw std::invalid_argument("prior_loss: no bins");
    if (force_grads.size() != prior.force_net.params.size() ||
        diff_grads.size() != prior.diffusion_net.params.size())
        throw std::invalid_argument("prior_loss_grad: grad buffer size mismatch");
    detail::PriorEval ev;
    const double inv_k = 1.0 / static_cast<double>(bins.size());
    double acc = 0.0;
    for (const auto& bin : bins) {
        if (bin.empty()) throw std::invalid_argument("prior_loss: empty bin group");
        const double scale = -inv_k / static_cast<double>(bin.size());
        double bin_acc = 0.0;
        for (const TransitionSample& s : bin) {
            detail::eval_prior(prior, s, ev);
            bin_acc += ev.log_density;
            detail::accumulate_prior_grads(prior, ev, scale, force_grads, diff_grads);
        }
        acc += bin_acc / static_cast<double>(bin.size());
    }
    return -acc * inv_k;
}

/// Displacement sample from the constant-diffusion prior: f_omega(z) + noise.
/// The diffusion net plays no role here; the prior's diffusion is fixed to
/// identity for generation.
inline Vec sample_prior_displacement(const PriorModel& prior, const Vec& z, const Vec& noise) {
    Vec dz = mlp_forward(prior.force_net, z);
    if (noise.size() != dz.size())
        throw std::invalid_argument("sample_prior_displacement: noise dimension mismatch");
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += noise[i];
    return dz;
}

inline Vec sample_prior_displacement(const PriorModel& prior, const Vec& z, Rng& rng) {
    Vec noise(z.size());
    rng.fill_normal(noise);
    return sample_prior_displacement(prior, z, noise);
}

}  // namespace dynae
