// Command-line driver: generate synthetic datasets, train the
// dynamics-constrained autoencoder (or the variational baseline), evaluate a
// trained model against ground-truth factors, and export latent trajectories.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure
// during training (the last good checkpoint is still written).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dynae/config.hpp"
#include "dynae/datagen.hpp"
#include "dynae/eval.hpp"
#include "dynae/trainer.hpp"

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<dynae::Vec> copy_frames(const dynae::Trajectory& traj) {
    std::vector<dynae::Vec> rows;
    rows.reserve(traj.frames());
    for (std::size_t i = 0; i < traj.frames(); ++i) {
        const auto f = traj.frame(i);
        rows.emplace_back(f.begin(), f.end());
    }
    return rows;
}

// Latent coordinates for every frame. The variational encoder carries a mean
// head followed by a log-variance head; only the mean is the representation.
std::vector<dynae::Vec> encode_all(const dynae::FeedForwardNet& enc,
                                   const dynae::Trajectory& obs, bool vae_mean_head) {
    const int d = vae_mean_head ? enc.out_dim() / 2 : enc.out_dim();
    std::vector<dynae::Vec> z;
    z.reserve(obs.frames());
    for (std::size_t i = 0; i < obs.frames(); ++i) {
        dynae::Vec v = dynae::mlp_forward(enc, obs.frame(i));
        v.resize(static_cast<std::size_t>(d));
        z.push_back(std::move(v));
    }
    return z;
}

dynae::GroundTruthDataset load_dataset_checked(const std::string& dir) {
    if (dir.empty()) throw std::invalid_argument("config: \"dataset\" is required");
    try {
        return dynae::load_dataset(dir);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("dataset: ") + e.what());
    }
}

struct EncoderInfo {
    dynae::FeedForwardNet net;
    int latent_dim = 0;
    bool vae = false;
};

EncoderInfo load_encoder(const std::string& model_dir, const std::string& model,
                         const dynae::Trajectory& obs) {
    EncoderInfo info;
    info.vae = model == "betavae";
    dynae::Checkpoint ck;
    try {
        ck = dynae::load_checkpoint(model_dir + "/encoder.ckpt");
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("model: ") + e.what());
    }
    info.net = std::move(ck.net);
    if (info.net.in_dim() != obs.dims)
        throw std::invalid_argument("model: encoder expects " + std::to_string(info.net.in_dim()) +
                                    "-dimensional frames, dataset has " +
                                    std::to_string(obs.dims));
    if (info.vae && info.net.out_dim() % 2 != 0)
        throw std::invalid_argument("model: variational encoder must have an even output width");
    info.latent_dim = info.vae ? info.net.out_dim() / 2 : info.net.out_dim();
    return info;
}

int cmd_generate(const std::string& recipe, std::size_t frames, std::uint64_t seed,
                 const std::string& out, double dt_sim, int stride, double step_sigma,
                 int image_size) {
    dynae::GroundTruthDataset ds;
    if (recipe == "three-well") {
        ds = dynae::gen_three_well(frames, dt_sim, stride, seed);
    } else if (recipe == "sprite2") {
        ds = dynae::gen_sprite_walk({dynae::Factor::x_pos, dynae::Factor::y_pos}, frames,
                                    step_sigma, image_size, seed);
    } else if (recipe == "sprite3") {
        ds = dynae::gen_sprite_walk(
            {dynae::Factor::scale, dynae::Factor::x_pos, dynae::Factor::y_pos}, frames,
            step_sigma, image_size, seed);
    } else {
        std::cerr << "dynae: unknown recipe \"" << recipe
                  << "\" (valid: three-well, sprite2, sprite3)\n";
        return 2;
    }
    dynae::save_dataset(ds, out);
    std::cout << "wrote " << ds.observations.frames() << " frames (" << ds.observations.dims
              << "-dimensional) to " << out << "\n";
    return 0;
}

dynae::ExperimentConfig load_run_config(const std::string& config_path,
                                        const std::string& model_flag, int threads_flag) {
    dynae::ExperimentConfig cfg = dynae::load_experiment_config(config_path);
    if (!model_flag.empty()) cfg.model = model_flag;
    if (threads_flag > 0) cfg.threads = threads_flag;
    dynae::validate_experiment_config(cfg);
    return cfg;
}

std::string betavae_metrics_jsonl(const std::vector<dynae::BetaVaeMetrics>& metrics) {
    std::string out;
    for (const dynae::BetaVaeMetrics& m : metrics) {
        nlohmann::ordered_json j;
        j["epoch"] = m.epoch;
        j["rec"] = m.rec;
        j["kl"] = m.kl;
        j["wall_ms"] = m.wall_ms;
        out += j.dump();
        out += '\n';
    }
    return out;
}

int cmd_train(const std::string& config_path, const std::string& model_flag, int threads_flag,
              bool quiet) {
    const dynae::ExperimentConfig cfg = load_run_config(config_path, model_flag, threads_flag);
    const dynae::GroundTruthDataset ds = load_dataset_checked(cfg.dataset);
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/config.json", dynae::config_to_json(cfg).dump(2) + "\n");

    if (cfg.model == "dynae") {
        const auto observer = [quiet](const dynae::ModelBundle&, const dynae::EpochMetrics& em) {
            if (quiet) return;
            std::fprintf(stderr, "epoch %d  rec %.6g  reg %.6g  prior %.6g  K %d  (%.0f ms)\n",
                         em.epoch, em.rec, em.reg, em.prior, em.n_bins, em.wall_ms);
        };
        const dynae::TrainResult r = dynae::run_training(ds.observations, cfg.train, observer);
        dynae::save_checkpoint(r.bundle.encoder, cfg.train.seed, cfg.out_dir + "/encoder.ckpt");
        dynae::save_checkpoint(r.bundle.decoder, cfg.train.seed, cfg.out_dir + "/decoder.ckpt");
        dynae::save_checkpoint(r.bundle.prior.force_net, cfg.train.seed,
                               cfg.out_dir + "/force.ckpt");
        dynae::save_checkpoint(r.bundle.prior.diffusion_net, cfg.train.seed,
                               cfg.out_dir + "/diffusion.ckpt");
        write_text(cfg.out_dir + "/metrics.jsonl", dynae::metrics_to_jsonl(r.metrics));
        if (r.aborted) {
            std::cerr << "dynae: numerical failure in epoch " << r.abort_epoch
                      << "; last good checkpoint retained in " << cfg.out_dir << "\n";
            return 3;
        }
        std::cout << "trained dynae for " << r.metrics.size() << " epochs; results in "
                  << cfg.out_dir << "\n";
    } else {
        const dynae::BetaVaeResult r = dynae::betavae_train(ds.observations, cfg.train);
        dynae::save_checkpoint(r.model.encoder, cfg.train.seed, cfg.out_dir + "/encoder.ckpt");
        dynae::save_checkpoint(r.model.decoder, cfg.train.seed, cfg.out_dir + "/decoder.ckpt");
        write_text(cfg.out_dir + "/metrics.jsonl", betavae_metrics_jsonl(r.metrics));
        if (r.aborted) {
            std::cerr << "dynae: numerical failure in epoch " << r.abort_epoch
                      << "; last good checkpoint retained in " << cfg.out_dir << "\n";
            return 3;
        }
        std::cout << "trained betavae for " << r.metrics.size() << " epochs; results in "
                  << cfg.out_dir << "\n";
    }
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& model_flag,
                 const std::string& model_dir_flag, const std::string& out_flag,
                 int threads_flag) {
    const dynae::ExperimentConfig cfg = load_run_config(config_path, model_flag, threads_flag);
    const std::string model_dir = model_dir_flag.empty() ? cfg.out_dir : model_dir_flag;
    const std::string out_dir = out_flag.empty() ? model_dir : out_flag;
    const dynae::GroundTruthDataset ds = load_dataset_checked(cfg.dataset);
    const EncoderInfo enc = load_encoder(model_dir, cfg.model, ds.observations);
    const std::vector<dynae::Vec> z = encode_all(enc.net, ds.observations, enc.vae);
    std::filesystem::create_directories(out_dir);

    nlohmann::ordered_json recovery;
    if (ds.factors.dims == enc.latent_dim) {
        const dynae::RecoveryReport report = dynae::affine_recovery(z, copy_frames(ds.factors));
        recovery = dynae::recovery_to_json(report);
        std::cout << "affine recovery R^2 " << report.affine_r2 << ", alignment error "
                  << report.procrustes_error << "\n";
    } else {
        recovery["skipped"] = "latent dimension " + std::to_string(enc.latent_dim) +
                              " does not match factor dimension " +
                              std::to_string(ds.factors.dims);
    }
    write_text(out_dir + "/recovery.json", recovery.dump(2) + "\n");

    nlohmann::ordered_json shape;
    if (z.size() >= 100) {
        shape = dynae::shape_to_json(dynae::distribution_shape(z));
    } else {
        shape["skipped"] = "distribution shape needs at least 100 frames";
    }
    write_text(out_dir + "/shape.json", shape.dump(2) + "\n");

    if (cfg.model == "dynae" && enc.latent_dim == 2) {
        dynae::Checkpoint force, diffusion;
        try {
            force = dynae::load_checkpoint(model_dir + "/force.ckpt");
            diffusion = dynae::load_checkpoint(model_dir + "/diffusion.ckpt");
        } catch (const std::exception& e) {
            throw std::invalid_argument(std::string("model: ") + e.what());
        }
        dynae::PriorModel prior{std::move(force.net), std::move(diffusion.net)};
        dynae::FieldGrid grid;
        grid.lo = z.front();
        grid.hi = z.front();
        for (const dynae::Vec& v : z)
            for (int c = 0; c < 2; ++c) {
                grid.lo[c] = std::min(grid.lo[c], v[c]);
                grid.hi[c] = std::max(grid.hi[c], v[c]);
            }
        for (int c = 0; c < 2; ++c) {
            const double w = grid.hi[c] - grid.lo[c];
            const double pad = w > 0.0 ? 0.05 * w : 0.5;
            grid.lo[c] -= pad;
            grid.hi[c] += pad;
        }
        grid.n = {25, 25};
        write_text(out_dir + "/fields.csv", dynae::export_fields(prior, grid));
    }

    constexpr int kFreeEnergyBins = 40;
    if (enc.latent_dim == 2 && z.size() >= kFreeEnergyBins) {
        const dynae::FreeEnergyGrid fe = dynae::free_energy_histogram(z, kFreeEnergyBins);
        write_text(out_dir + "/free_energy.csv", dynae::free_energy_csv(fe));
    }

    std::cout << "evaluation artifacts in " << out_dir << "\n";
    return 0;
}

int cmd_export_latent(const std::string& config_path, const std::string& model_flag,
                      const std::string& model_dir_flag, const std::string& out_flag,
                      int threads_flag) {
    const dynae::ExperimentConfig cfg = load_run_config(config_path, model_flag, threads_flag);
    const std::string model_dir = model_dir_flag.empty() ? cfg.out_dir : model_dir_flag;
    const std::string out_file = out_flag.empty() ? model_dir + "/latent.csv" : out_flag;
    const dynae::GroundTruthDataset ds = load_dataset_checked(cfg.dataset);
    const EncoderInfo enc = load_encoder(model_dir, cfg.model, ds.observations);
    const std::vector<dynae::Vec> z = encode_all(enc.net, ds.observations, enc.vae);

    std::string csv;
    for (int c = 0; c < enc.latent_dim; ++c) {
        if (c) csv += ',';
        csv += "z" + std::to_string(c + 1);
    }
    csv += '\n';
    for (const dynae::Vec& v : z) {
        for (int c = 0; c < enc.latent_dim; ++c) {
            if (c) csv += ',';
            csv += dynae::detail::format_double(v[c]);
        }
        csv += '\n';
    }
    if (const auto parent = std::filesystem::path(out_file).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    write_text(out_file, csv);
    std::cout << "wrote " << z.size() << " latent frames to " << out_file << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamics-constrained autoencoder toolkit"};
    app.set_help_flag("--help", "print help and exit");
    app.require_subcommand(1);

    std::string g_recipe, g_out;
    std::uint64_t g_seed = 0;
    std::size_t g_frames = 0;
    double g_dt_sim = 0.01, g_step_sigma = 0.1;
    int g_stride = 5, g_image = 16;
    CLI::App* gen = app.add_subcommand("generate", "write a synthetic ground-truth dataset");
    gen->add_option("--recipe", g_recipe, "dataset family: three-well, sprite2, sprite3")
        ->required();
    gen->add_option("--frames", g_frames, "number of frames")->required();
    gen->add_option("--seed", g_seed, "generator seed (default 0)");
    gen->add_option("--out", g_out, "output dataset directory")->required();
    gen->add_option("--dt-sim", g_dt_sim, "integrator step, three-well only (default 0.01)");
    gen->add_option("--stride", g_stride, "keep every n-th step, three-well only (default 5)");
    gen->add_option("--step-sigma", g_step_sigma, "factor step scale, sprites only (default 0.1)");
    gen->add_option("--image-size", g_image, "sprite side length in pixels (default 16)");

    std::string t_config, t_model;
    int t_threads = 0;
    bool t_quiet = false;
    CLI::App* train = app.add_subcommand("train", "train a model from an experiment config");
    train->add_option("--config", t_config, "experiment config JSON")->required();
    train->add_option("--model", t_model, "override the configured model")
        ->check(CLI::IsMember({"dynae", "betavae"}));
    train->add_option("--threads", t_threads, "worker thread cap (default 1, deterministic)")
        ->check(CLI::PositiveNumber);
    train->add_flag("--quiet", t_quiet, "suppress per-epoch progress lines");

    std::string e_config, e_model, e_model_dir, e_out;
    int e_threads = 0;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a trained model against factors");
    evaluate->add_option("--config", e_config, "experiment config JSON")->required();
    evaluate->add_option("--model", e_model, "override the configured model")
        ->check(CLI::IsMember({"dynae", "betavae"}));
    evaluate->add_option("--model-dir", e_model_dir, "checkpoint directory (default: out_dir)");
    evaluate->add_option("--out", e_out, "artifact directory (default: the model directory)");
    evaluate->add_option("--threads", e_threads, "worker thread cap (default 1, deterministic)")
        ->check(CLI::PositiveNumber);

    std::string x_config, x_model, x_model_dir, x_out;
    int x_threads = 0;
    CLI::App* export_latent =
        app.add_subcommand("export-latent", "encode a dataset and write the latent CSV");
    export_latent->add_option("--config", x_config, "experiment config JSON")->required();
    export_latent->add_option("--model", x_model, "override the configured model")
        ->check(CLI::IsMember({"dynae", "betavae"}));
    export_latent->add_option("--model-dir", x_model_dir,
                              "checkpoint directory (default: out_dir)");
    export_latent->add_option("--out", x_out, "output CSV path (default: <model-dir>/latent.csv)");
    export_latent->add_option("--threads", x_threads,
                              "worker thread cap (default 1, deterministic)")
        ->check(CLI::PositiveNumber);

    for (CLI::App* sub : {gen, train, evaluate, export_latent})
        sub->set_help_flag("--help", "print help and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen)
            return cmd_generate(g_recipe, g_frames, g_seed, g_out, g_dt_sim, g_stride,
                                g_step_sigma, g_image);
        if (*train) return cmd_train(t_config, t_model, t_threads, t_quiet);
        if (*evaluate) return cmd_evaluate(e_config, e_model, e_model_dir, e_out, e_threads);
        if (*export_latent)
            return cmd_export_latent(x_config, x_model, x_model_dir, x_out, x_threads);
    } catch (const std::exception& e) {
        std::cerr << "dynae: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
