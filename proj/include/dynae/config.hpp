#pragma once

// Experiment configuration: a single JSON document that pins everything a
// training or evaluation run needs. Parsing is strict: an unrecognized key
// anywhere in the document is an error, so a misspelled setting fails the run
// up front instead of silently training with a default.

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "dynae/trainer.hpp"

namespace dynae {

struct ExperimentConfig {
    int version = 1;
    std::string model = "dynae";  // "dynae" or "betavae"
    std::string recipe;           // optional provenance note; validated if set
    std::string dataset;          // directory with observations/factors/descriptor
    std::string out_dir = "out";
    int threads = 1;
    TrainConfig train;
};

namespace detail {

inline void require_keys_in(const nlohmann::json& obj, const std::set<std::string>& allowed,
                            const std::string& scope) {
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key()))
            throw std::invalid_argument("config: unknown key \"" + scope + item.key() + "\"");
    }
}

inline double get_num(const nlohmann::json& obj, const char* key, double fallback,
                      const std::string& scope) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw std::invalid_argument("config: \"" + scope + key + "\" must be a number");
    return v.get<double>();
}

inline std::int64_t get_int(const nlohmann::json& obj, const char* key, std::int64_t fallback,
                            const std::string& scope) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer())
        throw std::invalid_argument("config: \"" + scope + key + "\" must be an integer");
    return v.get<std::int64_t>();
}

inline std::string get_str(const nlohmann::json& obj, const char* key, std::string fallback,
                           const std::string& scope) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) throw std::invalid_argument("config: \"" + scope + key + "\" must be a string");
    return v.get<std::string>();
}

}  // namespace detail

inline void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.version != 1) throw std::invalid_argument("config: unsupported \"version\" (expected 1)");
    if (cfg.model != "dynae" && cfg.model != "betavae")
        throw std::invalid_argument("config: \"model\" must be \"dynae\" or \"betavae\"");
    if (!cfg.recipe.empty() && cfg.recipe != "three-well" && cfg.recipe != "sprite2" &&
        cfg.recipe != "sprite3")
        throw std::invalid_argument("config: unknown \"recipe\" \"" + cfg.recipe +
                                    "\" (valid: three-well, sprite2, sprite3)");
    if (cfg.out_dir.empty()) throw std::invalid_argument("config: \"out_dir\" must not be empty");
    if (cfg.threads < 1) throw std::invalid_argument("config: \"threads\" must be >= 1");

    const TrainConfig& t = cfg.train;
    if (t.latent_dim < 1) throw std::invalid_argument("config: \"train.latent_dim\" must be >= 1");
    if (!(t.beta >= 0.0)) throw std::invalid_argument("config: \"train.beta\" must be >= 0");
    if (!(t.gamma >= 1.0)) throw std::invalid_argument("config: \"train.gamma\" must be >= 1");
    if (t.n_projections < 1)
        throw std::invalid_argument("config: \"train.n_projections\" must be >= 1");
    if (!(t.d_min >= 0.0)) throw std::invalid_argument("config: \"train.d_min\" must be >= 0");
    if (t.batch_size < 1) throw std::invalid_argument("config: \"train.batch_size\" must be >= 1");
    if (t.epochs < 1) throw std::invalid_argument("config: \"train.epochs\" must be >= 1");
    if (!(t.learning_rate > 0.0))
        throw std::invalid_argument("config: \"train.learning_rate\" must be > 0");
    if (t.enc_hidden < 1) throw std::invalid_argument("config: \"train.enc_hidden\" must be >= 1");
    if (t.enc_layers < 0) throw std::invalid_argument("config: \"train.enc_layers\" must be >= 0");
    if (t.prior_hidden < 1)
        throw std::invalid_argument("config: \"train.prior_hidden\" must be >= 1");
    if (t.prior_layers < 0)
        throw std::invalid_argument("config: \"train.prior_layers\" must be >= 0");
    if (t.warmup_epochs < 0)
        throw std::invalid_argument("config: \"train.warmup_epochs\" must be >= 0");
    if (t.ramp_epochs < 0) throw std::invalid_argument("config: \"train.ramp_epochs\" must be >= 0");
    if (t.cluster_k_lo < 1)
        throw std::invalid_argument("config: \"train.cluster_k_lo\" must be >= 1");
    if (t.cluster_k_hi < t.cluster_k_lo)
        throw std::invalid_argument("config: \"train.cluster_k_hi\" must be >= cluster_k_lo");
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: document must be a JSON object");
    detail::require_keys_in(
        j, {"version", "model", "recipe", "dataset", "out_dir", "threads", "train"}, "");
    if (!j.contains("version")) throw std::invalid_argument("config: missing required \"version\"");

    ExperimentConfig cfg;
    cfg.version = static_cast<int>(detail::get_int(j, "version", 1, ""));
    cfg.model = detail::get_str(j, "model", cfg.model, "");
    cfg.recipe = detail::get_str(j, "recipe", cfg.recipe, "");
    cfg.dataset = detail::get_str(j, "dataset", cfg.dataset, "");
    cfg.out_dir = detail::get_str(j, "out_dir", cfg.out_dir, "");
    cfg.threads = static_cast<int>(detail::get_int(j, "threads", cfg.threads, ""));

    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (!t.is_object()) throw std::invalid_argument("config: \"train\" must be an object");
        detail::require_keys_in(t,
                                {"latent_dim", "beta", "gamma", "n_projections", "d_min",
                                 "batch_size", "epochs", "learning_rate", "seed", "enc_hidden",
                                 "enc_layers", "prior_hidden", "prior_layers", "warmup_epochs",
                                 "ramp_epochs", "cluster_k_lo", "cluster_k_hi"},
                                "train.");
        TrainConfig& c = cfg.train;
        const std::string s = "train.";
        c.latent_dim = static_cast<int>(detail::get_int(t, "latent_dim", c.latent_dim, s));
        c.beta = detail::get_num(t, "beta", c.beta, s);
        c.gamma = detail::get_num(t, "gamma", c.gamma, s);
        c.n_projections = static_cast<int>(detail::get_int(t, "n_projections", c.n_projections, s));
        c.d_min = detail::get_num(t, "d_min", c.d_min, s);
        c.batch_size = static_cast<int>(detail::get_int(t, "batch_size", c.batch_size, s));
        c.epochs = static_cast<int>(detail::get_int(t, "epochs", c.epochs, s));
        c.learning_rate = detail::get_num(t, "learning_rate", c.learning_rate, s);
        if (t.contains("seed")) {
            const auto& v = t.at("seed");
            if (!v.is_number_integer() ||
                (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
                throw std::invalid_argument("config: \"train.seed\" must be a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        }
        c.enc_hidden = static_cast<int>(detail::get_int(t, "enc_hidden", c.enc_hidden, s));
        c.enc_layers = static_cast<int>(detail::get_int(t, "enc_layers", c.enc_layers, s));
        c.prior_hidden = static_cast<int>(detail::get_int(t, "prior_hidden", c.prior_hidden, s));
        c.prior_layers = static_cast<int>(detail::get_int(t, "prior_layers", c.prior_layers, s));
        c.warmup_epochs = static_cast<int>(detail::get_int(t, "warmup_epochs", c.warmup_epochs, s));
        c.ramp_epochs = static_cast<int>(detail::get_int(t, "ramp_epochs", c.ramp_epochs, s));
        c.cluster_k_lo = static_cast<int>(detail::get_int(t, "cluster_k_lo", c.cluster_k_lo, s));
        c.cluster_k_hi = static_cast<int>(detail::get_int(t, "cluster_k_hi", c.cluster_k_hi, s));
    }

    validate_experiment_config(cfg);
    return cfg;
}

/// Full echo of the effective settings, defaults included, in a stable key
/// order. Re-parsing the echo reproduces the config exactly.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["version"] = cfg.version;
    j["model"] = cfg.model;
    j["recipe"] = cfg.recipe;
    j["dataset"] = cfg.dataset;
    j["out_dir"] = cfg.out_dir;
    j["threads"] = cfg.threads;
    nlohmann::ordered_json t;
    const TrainConfig& c = cfg.train;
    t["latent_dim"] = c.latent_dim;
    t["beta"] = c.beta;
    t["gamma"] = c.gamma;
    t["n_projections"] = c.n_projections;
    t["d_min"] = c.d_min;
    t["batch_size"] = c.batch_size;
    t["epochs"] = c.epochs;
    t["learning_rate"] = c.learning_rate;
    t["seed"] = c.seed;
    t["enc_hidden"] = c.enc_hidden;
    t["enc_layers"] = c.enc_layers;
    t["prior_hidden"] = c.prior_hidden;
    t["prior_layers"] = c.prior_layers;
    t["warmup_epochs"] = c.warmup_epochs;
    t["ramp_epochs"] = c.ramp_epochs;
    t["cluster_k_lo"] = c.cluster_k_lo;
    t["cluster_k_hi"] = c.cluster_k_hi;
    j["train"] = t;
    return j;
}

/// Environment may override exactly two settings: where results land
/// (DYNAE_OUT_DIR) and how many worker threads may run (DYNAE_THREADS).
/// Everything else comes from the config file alone.
inline void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* dir = std::getenv("DYNAE_OUT_DIR"); dir && *dir) cfg.out_dir = dir;
    if (const char* thr = std::getenv("DYNAE_THREADS"); thr && *thr) {
        try {
            std::size_t pos = 0;
            const int n = std::stoi(thr, &pos);
            if (pos != std::string(thr).size() || n < 1) throw std::invalid_argument("range");
        } catch (const std::exception&) {
            throw std::invalid_argument("config: DYNAE_THREADS must be a positive integer");
        }
        cfg.threads = std::stoi(thr);
    }
    validate_experiment_config(cfg);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    ExperimentConfig cfg = parse_experiment_config(j);
    apply_env_overrides(cfg);
    return cfg;
}

}  // namespace dynae
