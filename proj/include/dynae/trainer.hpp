// Alternating two-objective training: representation steps on the
// encoder/decoder pair against the displacement regularizer, prior steps on
// the force/diffusion networks, driven by per-epoch re-clustering and
// well-tempered resampling. Also the Gaussian-encoder baseline.
#pragma once

#include <algorithm>
#include <chrono>

#include "dynae/langevin.hpp"
#include "dynae/partition.hpp"
#include "dynae/swdist.hpp"
#include "dynae/trajectory.hpp"

namespace dynae {

struct TrainConfig {
    int latent_dim = 2;
    double beta = 1.0;        // regularizer weight after the ramp
    double gamma = 2.0;       // well-tempered exponent
    int n_projections = 50;   // directions per batch
    double d_min = 0.0;       // 0 = calibrate on the first clustering epoch
    int batch_size = 128;
    int epochs = 240;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    int enc_hidden = 64, enc_layers = 2;      // encoder/decoder hidden shape
    int prior_hidden = 32, prior_layers = 3;  // force/diffusion hidden shape
    // Warm-up is off by default: reconstruction alone settles into an
    // embedding of the raw coordinates that the displacement term can no
    // longer pull apart once committed.  A short ramp remains.
    int warmup_epochs = 0;  // beta held at zero
    int ramp_epochs = 5;    // then ramped linearly to cfg.beta
    std::size_t cluster_k_lo = 20, cluster_k_hi = 100;
};

/// Regularizer weight for a given epoch under the warm-up schedule.
inline double beta_at_epoch(const TrainConfig& cfg, int epoch) {
    if (epoch < cfg.warmup_epochs) return 0.0;
    if (cfg.ramp_epochs <= 0 || epoch >= cfg.warmup_epochs + cfg.ramp_epochs) return cfg.beta;
    return cfg.beta * static_cast<double>(epoch - cfg.warmup_epochs + 1) / cfg.ramp_epochs;
}

struct ModelBundle {
    FeedForwardNet encoder, decoder;
    PriorModel prior;
    AdamState rep_state;    // over {encoder, decoder}
    AdamState prior_state;  // over {force, diffusion}
};

inline std::vector<int> hidden_dims(int in, int hidden, int layers, int out) {
    std::vector<int> dims{in};
    for (int i = 0; i < layers; ++i) dims.push_back(hidden);
    dims.push_back(out);
    return dims;
}

inline ModelBundle make_bundle(int obs_dim, const TrainConfig& cfg, Rng& rng) {
    ModelBundle b;
    b.encoder = make_net(hidden_dims(obs_dim, cfg.enc_hidden, cfg.enc_layers, cfg.latent_dim),
                         Activation::relu);
    b.decoder = make_net(hidden_dims(cfg.latent_dim, cfg.enc_hidden, cfg.enc_layers, obs_dim),
                         Activation::relu);
    b.prior = make_prior(cfg.latent_dim, cfg.prior_hidden, cfg.prior_layers);
    init_net(b.encoder, rng);
    init_net(b.decoder, rng);
    init_prior(b.prior, rng);
    b.rep_state = make_adam(b.encoder.params.size() + b.decoder.params.size(),
                            cfg.learning_rate);
    b.prior_state = make_adam(
        b.prior.force_net.params.size() + b.prior.diffusion_net.params.size(),
        cfg.learning_rate);
    return b;
}

/// A consecutive-frame pair, viewed in place.
struct PairRef {
    std::span<const double> x_t, x_next;
};

/// Mean per-bin reconstruction error, both frames of every pair:
///   (1/K) sum_k (1/N_k) sum [ |psi(phi(X_t)) - X_t|^2 + |psi(phi(X_next)) - X_next|^2 ]
inline double rec_loss(const FeedForwardNet& enc, const FeedForwardNet& dec,
                       const std::vector<std::vector<PairRef>>& bins) {
    if (bins.empty()) throw std::invalid_argument("rec_loss: no bins");
    double acc = 0.0;
    for (const auto& bin : bins) {
        if (bin.empty()) throw std::invalid_argument("rec_loss: empty bin group");
        double bin_acc = 0.0;
        for (const PairRef& p : bin) {
            for (const auto& x : {p.x_t, p.x_next}) {
                const Vec xhat = mlp_forward(dec, mlp_forward(enc, x));
                double r2 = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const double r = xhat[i] - x[i];
                    r2 += r * r;
                }
                bin_acc += r2;
            }
        }
        acc += bin_acc / static_cast<double>(bin.size());
    }
    return acc / static_cast<double>(bins.size());
}

struct RepLossResult {
    double total = 0.0;
    double rec = 0.0;
    double reg = 0.0;  // raw regularizer value, before the beta weight
    int skipped_bins = 0;
};

/// rec_loss + beta * binned displacement regularizer. `prior_dz` holds one
/// pre-generated displacement sample per pair (treated as constants); it may
/// be empty when beta is zero.
inline RepLossResult rep_loss(const FeedForwardNet& enc, const FeedForwardNet& dec,
                              const std::vector<std::vector<PairRef>>& bins,
                              const std::vector<std::vector<Vec>>& prior_dz,
                              const DirectionSet& dirs, double beta) {
    RepLossResult res;
    res.rec = rec_loss(enc, dec, bins);
    if (beta != 0.0) {
        std::vector<std::vector<Vec>> enc_dz(bins.size());
        for (std::size_t k = 0; k < bins.size(); ++k)
            for (const PairRef& p : bins[k]) {
                Vec zt = mlp_forward(enc, p.x_t);
                const Vec zn = mlp_forward(enc, p.x_next);
                for (std::size_t j = 0; j < zt.size(); ++j) zt[j] = zn[j] - zt[j];
                enc_dz[k].push_back(std::move(zt));
            }
        const BinnedSwResult sw = binned_sw_regularizer(enc_dz, prior_dz, dirs);
        res.reg = sw.value;
        res.skipped_bins = sw.skipped_bins;
    }
    res.total = res.rec + beta * res.reg;
    return res;
}

/// rep_loss with gradients for the encoder and decoder only. Gradient
/// buffers must be pre-sized; contributions are accumulated.
inline RepLossResult rep_loss_grad(const FeedForwardNet& enc, const FeedForwardNet& dec,
                                   const std::vector<std::vector<PairRef>>& bins,
                                   const std::vector<std::vector<Vec>>& prior_dz,
                                   const DirectionSet& dirs, double beta, Vec& enc_grads,
                                   Vec& dec_grads) {
    if (bins.empty()) throw std::invalid_argument("rep_loss: no bins");
    if (enc_grads.size() != enc.params.size() || dec_grads.size() != dec.params.size())
        throw std::invalid_argument("rep_loss_grad: grad buffer size mismatch");
    const std::size_t n_bins = bins.size();
    RepLossResult res;

    // Pass 1: forward caches, decoder gradients, reconstruction upstreams.
    std::vector<std::vector<ForwardCache>> enc_caches(n_bins);  // 2 per pair: t, next
    std::vector<std::vector<Vec>> rec_upstream(n_bins);         // latent-space, 2 per pair
    std::vector<std::vector<Vec>> enc_dz(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
        const auto& bin = bins[k];
        if (bin.empty()) throw std::invalid_argument("rec_loss: empty bin group");
        const double w = 1.0 / (static_cast<double>(n_bins) * static_cast<double>(bin.size()));
        enc_caches[k].resize(2 * bin.size());
        rec_upstream[k].resize(2 * bin.size());
        for (std::size_t i = 0; i < bin.size(); ++i) {
            const std::span<const double> frames[2] = {bin[i].x_t, bin[i].x_next};
            for (int side = 0; side < 2; ++side) {
                ForwardCache& fc = enc_caches[k][2 * i + side];
                mlp_forward_cached(enc, frames[side], fc);
                ForwardCache dc;
                mlp_forward_cached(dec, fc.output(), dc);
                const Vec& xhat = dc.output();
                Vec up(xhat.size());
                double r2 = 0.0;
                for (std::size_t j = 0; j < xhat.size(); ++j) {
                    const double r = xhat[j] - frames[side][j];
                    r2 += r * r;
                    up[j] = 2.0 * w * r;
                }
                res.rec += w * r2;
                rec_upstream[k][2 * i + side] = mlp_backward_cached(dec, dc, up, dec_grads);
            }
            if (beta != 0.0) {
                const Vec& zt = enc_caches[k][2 * i].output();
                const Vec& zn = enc_caches[k][2 * i + 1].output();
                Vec dz(zt.size());
                for (std::size_t j = 0; j < zt.size(); ++j) dz[j] = zn[j] - zt[j];
                enc_dz[k].push_back(std::move(dz));
            }
        }
    }

    // Displacement regularizer gradients w.r.t. the encoded displacements.
    std::vector<std::vector<Vec>> sw_grads;
    if (beta != 0.0) {
        sw_grads.assign(n_bins, {});
        for (std::size_t k = 0; k < n_bins; ++k)
            sw_grads[k].assign(bins[k].size(), Vec(enc.out_dim(), 0.0));
        const BinnedSwResult sw = binned_sw_regularizer_grad(enc_dz, prior_dz, dirs, sw_grads);
        res.reg = sw.value;
        res.skipped_bins = sw.skipped_bins;
    }

    // Pass 2: encoder gradients with combined upstreams.
    for (std::size_t k = 0; k < n_bins; ++k) {
        for (std::size_t i = 0; i < bins[k].size(); ++i) {
            Vec up_t = rec_upstream[k][2 * i];
            Vec up_n = rec_upstream[k][2 * i + 1];
            if (beta != 0.0) {
                const Vec& g = sw_grads[k][i];
                for (std::size_t j = 0; j < g.size(); ++j) {
                    up_t[j] -= beta * g[j];  // dz = z_next - z_t
                    up_n[j] += beta * g[j];
                }
            }
            mlp_backward_cached(enc, enc_caches[k][2 * i], up_t, enc_grads);
            mlp_backward_cached(enc, enc_caches[k][2 * i + 1], up_n, enc_grads);
        }
    }
    res.total = res.rec + beta * res.reg;
    if (!std::isfinite(res.total)) throw std::runtime_error("rep_loss: non-finite loss");
    return res;
}

/// One representation update: gradients of rep_loss, one Adam step on the
/// encoder and decoder. The prior is untouched.
inline RepLossResult rep_step(ModelBundle& bundle, const std::vector<std::vector<PairRef>>& bins,
                              const std::vector<std::vector<Vec>>& prior_dz,
                              const DirectionSet& dirs, double beta) {
    Vec enc_grads(bundle.encoder.params.size(), 0.0);
    Vec dec_grads(bundle.decoder.params.size(), 0.0);
    const RepLossResult res =
        rep_loss_grad(bundle.encoder, bundle.decoder, bins, prior_dz, dirs, beta, enc_grads,
                      dec_grads);
    adam_step_two(bundle.encoder.params, enc_grads, bundle.decoder.params, dec_grads,
                  bundle.rep_state);
    return res;
}

/// One prior update: gradients of the binned transition likelihood, one Adam
/// step on the force and diffusion networks. Encoder and decoder untouched.
inline double prior_step(ModelBundle& bundle,
                         const std::vector<std::vector<TransitionSample>>& bins) {
    Vec force_grads(bundle.prior.force_net.params.size(), 0.0);
    Vec diff_grads(bundle.prior.diffusion_net.params.size(), 0.0);
    const double loss = prior_loss_grad(bundle.prior, bins, force_grads, diff_grads);
    if (!std::isfinite(loss)) throw std::runtime_error("prior_step: non-finite loss");
    adam_step_two(bundle.prior.force_net.params, force_grads, bundle.prior.diffusion_net.params,
                  diff_grads, bundle.prior_state);
    return loss;
}

struct EpochMetrics {
    int epoch = 0;
    double rec = 0.0;
    double reg = 0.0;
    double prior = 0.0;
    int n_bins = 1;
    double wall_ms = 0.0;
};

struct TrainResult {
    ModelBundle bundle;
    std::vector<EpochMetrics> metrics;
    double d_min = 0.0;  // the value actually used once clustering starts
    bool aborted = false;
    int abort_epoch = -1;
};

inline Vec encode_frame(const FeedForwardNet& enc, std::span<const double> x) {
    return mlp_forward(enc, x);
}

using EpochObserver = std::function<void(const ModelBundle&, const EpochMetrics&)>;

/// Full training loop. Pairs are consecutive frames at the dataset's lag,
/// treated as unit lag. Epochs 0 and 1 use the raw data order as one bin;
/// from epoch 2 on, each epoch encodes the data, re-clusters at a fixed
/// d_min (calibrated once if the config leaves it zero), and resamples
/// well-tempered bins. Each minibatch takes B pairs from one uniformly
/// picked bin, applies a representation step, then a prior step on the
/// pre-update encodings. `on_epoch` runs after each completed epoch.
inline TrainResult run_training(const Trajectory& obs, const TrainConfig& cfg,
                                const EpochObserver& on_epoch = {}) {
    const std::size_t n_pairs = obs.frames() >= 2 ? obs.frames() - 1 : 0;
    if (n_pairs == 0) throw std::invalid_argument("run_training: need at least 2 frames");
    Rng rng(cfg.seed);
    TrainResult result;
    result.bundle = make_bundle(obs.dims, cfg, rng);
    result.d_min = cfg.d_min;
    ModelBundle last_good = result.bundle;

    const int B = std::max(1, cfg.batch_size);
    const int n_batches = std::max<int>(1, static_cast<int>(n_pairs) / B);

    std::vector<Vec> z_pts;  // encoded z_t per pair, rebuilt on clustering epochs
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double beta = beta_at_epoch(cfg, epoch);
        EpochMetrics em;
        em.epoch = epoch;

        // Any non-finite loss, gradient, or encoding inside the epoch rolls
        // the model back to the end of the previous epoch and stops.
        try {
            std::vector<std::vector<std::size_t>> bins;
            if (epoch >= 2) {
                z_pts.clear();
                z_pts.reserve(n_pairs);
                for (std::size_t t = 0; t < n_pairs; ++t) {
                    Vec z = mlp_forward(result.bundle.encoder, obs.frame(t));
                    if (!all_finite(z))
                        throw std::runtime_error("run_training: non-finite encoding");
                    z_pts.push_back(std::move(z));
                }
                if (result.d_min <= 0.0)
                    result.d_min = calibrate_dmin(z_pts, cfg.cluster_k_lo, cfg.cluster_k_hi);
                const std::vector<Vec> centers = regular_space_cluster(z_pts, result.d_min);
                const std::vector<int> labels = assign_voronoi(z_pts, centers);
                std::vector<std::int64_t> raw(centers.size(), 0);
                for (int l : labels) raw[l] += 1;
                const auto counts =
                    welltempered_counts(raw, cfg.gamma, static_cast<std::int64_t>(n_pairs));
                const auto picks = resample_dataset(labels, counts, rng);
                // Duplicate points can starve a late center; keep only bins
                // that received samples so the uniform pick always has a pool.
                std::size_t cursor = 0;
                for (std::size_t k = 0; k < centers.size(); ++k) {
                    std::vector<std::size_t> pool;
                    pool.reserve(counts[k]);
                    for (std::int64_t i = 0; i < counts[k]; ++i)
                        pool.push_back(picks[cursor++]);
                    if (!pool.empty()) bins.push_back(std::move(pool));
                }
            }
            em.n_bins = bins.empty() ? 1 : static_cast<int>(bins.size());

            for (int batch = 0; batch < n_batches; ++batch) {
                std::vector<std::vector<PairRef>> batch_bins(1);
                batch_bins[0].reserve(B);
                if (epoch >= 2) {
                    const auto& pool = bins[rng.uniform_index(bins.size())];
                    for (int i = 0; i < B; ++i) {
                        const std::size_t t = pool[rng.uniform_index(pool.size())];
                        batch_bins[0].push_back({obs.frame(t), obs.frame(t + 1)});
                    }
                } else {
                    // Pre-clustering epochs walk the pairs in raw data order.
                    for (int i = 0; i < B; ++i) {
                        const std::size_t t =
                            (static_cast<std::size_t>(batch) * B + i) % n_pairs;
                        batch_bins[0].push_back({obs.frame(t), obs.frame(t + 1)});
                    }
                }

                // Pre-update encodings drive both the prior samples and the
                // prior step.
                std::vector<std::vector<TransitionSample>> transitions(1);
                transitions[0].reserve(B);
                for (const PairRef& p : batch_bins[0]) {
                    Vec zt = mlp_forward(result.bundle.encoder, p.x_t);
                    Vec zn = mlp_forward(result.bundle.encoder, p.x_next);
                    for (std::size_t j = 0; j < zt.size(); ++j) zn[j] -= zt[j];
                    transitions[0].push_back({std::move(zt), std::move(zn)});
                }
                std::vector<std::vector<Vec>> prior_dz(1);
                DirectionSet dirs;
                if (beta != 0.0) {
                    dirs = sample_directions(cfg.latent_dim, cfg.n_projections, rng);
                    prior_dz[0].reserve(B);
                    for (const TransitionSample& s : transitions[0])
                        prior_dz[0].push_back(
                            sample_prior_displacement(result.bundle.prior, s.z, rng));
                }
                const RepLossResult rep =
                    rep_step(result.bundle, batch_bins, prior_dz, dirs, beta);
                const double prior_val = prior_step(result.bundle, transitions);
                em.rec += rep.rec;
                em.reg += rep.reg;
                em.prior += prior_val;
            }
        } catch (const std::runtime_error&) {
            result.bundle = last_good;
            result.aborted = true;
            result.abort_epoch = epoch;
            return result;
        }
        em.rec /= n_batches;
        em.reg /= n_batches;
        em.prior /= n_batches;
        em.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
        result.metrics.push_back(em);
        last_good = result.bundle;
        if (on_epoch) on_epoch(result.bundle, em);
    }
    return result;
}

/// One metrics record per line, stable key order.
inline std::string metrics_to_jsonl(const std::vector<EpochMetrics>& metrics) {
    std::string out;
    for (const EpochMetrics& em : metrics) {
        nlohmann::ordered_json j;
        j["epoch"] = em.epoch;
        j["rec"] = em.rec;
        j["reg"] = em.reg;
        j["prior"] = em.prior;
        j["K"] = em.n_bins;
        j["wall_ms"] = em.wall_ms;
        out += j.dump();
        out += '\n';
    }
    return out;
}

// --------------------------------------------------------------------------
// Gaussian-encoder baseline: stochastic encoder with mean and log-variance
// heads, standard-normal latent prior, closed-form KL, reparameterized
// sampling. Trains on single frames.

inline constexpr double kLogVarClamp = 10.0;

struct BetaVaeModel {
    FeedForwardNet encoder;  // D -> 2d: mean head then log-variance head
    FeedForwardNet decoder;  // d -> D
    int latent_dim = 0;
};

/// KL(N(mu, exp(logvar)) || N(0, 1)) for one coordinate.
inline double kl_gauss(double mu, double logvar) {
    return 0.5 * (mu * mu + std::exp(logvar) - 1.0 - logvar);
}

inline Vec betavae_encode_mean(const BetaVaeModel& model, std::span<const double> x) {
    Vec out = mlp_forward(model.encoder, x);
    out.resize(model.latent_dim);
    return out;
}

struct BetaVaeSample {
    double rec = 0.0;
    double kl = 0.0;
};

/// Loss and gradients for one frame with fixed reparameterization noise.
/// Contributes weight * (rec + beta * kl) worth of gradient to the buffers.
inline BetaVaeSample betavae_sample_grad(const BetaVaeModel& model, std::span<const double> x,
                                         const Vec& eps, double beta, double weight,
                                         Vec& enc_grads, Vec& dec_grads) {
    const int d = model.latent_dim;
    ForwardCache ec;
    mlp_forward_cached(model.encoder, x, ec);
    const Vec& heads = ec.output();
    Vec z(d);
    BetaVaeSample out;
    for (int j = 0; j < d; ++j) {
        const double lv = std::clamp(heads[d + j], -kLogVarClamp, kLogVarClamp);
        z[j] = heads[j] + std::exp(0.5 * lv) * eps[j];
        out.kl += kl_gauss(heads[j], lv);
    }
    ForwardCache dc;
    mlp_forward_cached(model.decoder, z, dc);
    const Vec& xhat = dc.output();
    Vec up(xhat.size());
    for (std::size_t j = 0; j < xhat.size(); ++j) {
        const double r = xhat[j] - x[j];
        out.rec += r * r;
        up[j] = 2.0 * weight * r;
    }
    const Vec u = mlp_backward_cached(model.decoder, dc, up, dec_grads);
    Vec enc_up(2 * d);
    for (int j = 0; j < d; ++j) {
        const double lv_raw = heads[d + j];
        const bool clamped = lv_raw < -kLogVarClamp || lv_raw > kLogVarClamp;
        const double lv = std::clamp(lv_raw, -kLogVarClamp, kLogVarClamp);
        const double sigma = std::exp(0.5 * lv);
        enc_up[j] = u[j] + weight * beta * heads[j];
        enc_up[d + j] = clamped ? 0.0
                                : 0.5 * sigma * eps[j] * u[j] +
                                      weight * beta * 0.5 * (sigma * sigma - 1.0);
    }
    mlp_backward_cached(model.encoder, ec, enc_up, enc_grads);
    return out;
}

struct BetaVaeMetrics {
    int epoch = 0;
    double rec = 0.0;
    double kl = 0.0;
    double wall_ms = 0.0;
};

struct BetaVaeResult {
    BetaVaeModel model;
    std::vector<BetaVaeMetrics> metrics;
    bool aborted = false;
    int abort_epoch = -1;
};

inline BetaVaeResult betavae_train(const Trajectory& obs, const TrainConfig& cfg) {
    if (obs.frames() < 2) throw std::invalid_argument("betavae_train: need at least 2 frames");
    Rng rng(cfg.seed);
    BetaVaeResult result;
    const int d = cfg.latent_dim;
    result.model.latent_dim = d;
    result.model.encoder = make_net(
        hidden_dims(obs.dims, cfg.enc_hidden, cfg.enc_layers, 2 * d), Activation::relu);
    result.model.decoder = make_net(
        hidden_dims(d, cfg.enc_hidden, cfg.enc_layers, obs.dims), Activation::relu);
    init_net(result.model.encoder, rng);
    init_net(result.model.decoder, rng);
    AdamState state = make_adam(
        result.model.encoder.params.size() + result.model.decoder.params.size(),
        cfg.learning_rate);
    BetaVaeModel last_good = result.model;

    const int B = std::max(1, cfg.batch_size);
    const int n_batches = std::max<int>(1, static_cast<int>(obs.frames()) / B);
    const double w = 1.0 / B;
    Vec enc_grads(result.model.encoder.params.size());
    Vec dec_grads(result.model.decoder.params.size());
    Vec eps(d);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        BetaVaeMetrics em;
        em.epoch = epoch;
        bool failed = false;
        for (int batch = 0; batch < n_batches && !failed; ++batch) {
            std::fill(enc_grads.begin(), enc_grads.end(), 0.0);
            std::fill(dec_grads.begin(), dec_grads.end(), 0.0);
            double rec_acc = 0.0, kl_acc = 0.0;
            for (int i = 0; i < B; ++i) {
                const auto x = obs.frame(rng.uniform_index(obs.frames()));
                rng.fill_normal(eps);
                const BetaVaeSample s = betavae_sample_grad(result.model, x, eps, cfg.beta, w,
                                                            enc_grads, dec_grads);
                rec_acc += s.rec;
                kl_acc += s.kl;
            }
            em.rec += rec_acc / B;
            em.kl += kl_acc / B;
            try {
                adam_step_two(result.model.encoder.params, enc_grads,
                              result.model.decoder.params, dec_grads, state);
            } catch (const std::runtime_error&) {
                failed = true;
            }
        }
        if (failed || !std::isfinite(em.rec) || !std::isfinite(em.kl)) {
            result.model = last_good;
            result.aborted = true;
            result.abort_epoch = epoch;
            return result;
        }
        em.rec /= n_batches;
        em.kl /= n_batches;
        em.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
        result.metrics.push_back(em);
        last_good = result.model;
    }
    return result;
}

}  // namespace dynae
