#pragma once

// One structured config document for the whole pipeline. Every field has the
// library default; unknown keys anywhere in the document are rejected before
// any work starts.

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gm/decision.hpp"
#include "gm/embed.hpp"
#include "gm/model.hpp"
#include "gm/simnet.hpp"
#include "gm/snapshot.hpp"
#include "gm/trainer.hpp"

namespace gm::config {

struct RunConfig {
    int n_devices = 500;
    int n_tasks = 8000;
    std::uint64_t seed = 7;
    sim::SimConfig sim;
    snap::WindowSpec window;
    double alpha1 = 0.6;
    double alpha2 = 0.4;
    embed::Node2vecConfig node2vec;
    model::GmDims model;
    train::TrainConfig train;
    decide::ChannelModel channel;

    // One seed to steer the whole pipeline.
    void override_seed(std::uint64_t s) {
        seed = s;
        node2vec.seed = s;
        train.seed = s;
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object())
        throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" + where +
                                        key + "'");
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline void parse_sim(const json& j, RunConfig& cfg) {
    check_keys(j,
               {"n_devices", "n_tasks", "seed", "arena_side_m",
                "cpu_choices_hz", "tx_power_w", "horizon_s", "mix",
                "affinity_fraction", "partner_weight_sigma",
                "profile_windows", "oscillation_period_windows"},
               "sim.");
    get_to(j, "n_devices", cfg.n_devices);
    get_to(j, "n_tasks", cfg.n_tasks);
    get_to(j, "seed", cfg.seed);
    get_to(j, "arena_side_m", cfg.sim.arena_side_m);
    get_to(j, "cpu_choices_hz", cfg.sim.cpu_choices_hz);
    get_to(j, "tx_power_w", cfg.sim.tx_power_w);
    get_to(j, "horizon_s", cfg.sim.horizon_s);
    get_to(j, "affinity_fraction", cfg.sim.affinity_fraction);
    get_to(j, "partner_weight_sigma", cfg.sim.partner_weight_sigma);
    get_to(j, "profile_windows", cfg.sim.profile_windows);
    get_to(j, "oscillation_period_windows",
           cfg.sim.oscillation_period_windows);
    if (j.contains("mix")) {
        const auto& m = j.at("mix");
        check_keys(m, {"stable", "degrading", "oscillating", "malicious"},
                   "sim.mix.");
        get_to(m, "stable", cfg.sim.mix.stable);
        get_to(m, "degrading", cfg.sim.mix.degrading);
        get_to(m, "oscillating", cfg.sim.mix.oscillating);
        get_to(m, "malicious", cfg.sim.mix.malicious);
    }
}

inline void parse_node2vec(const json& j, RunConfig& cfg) {
    check_keys(j,
               {"dim", "walks_per_node", "walk_length", "return_p", "inout_q",
                "window", "negatives", "epochs", "lr", "seed"},
               "node2vec.");
    get_to(j, "dim", cfg.node2vec.dim);
    get_to(j, "walks_per_node", cfg.node2vec.walks_per_node);
    get_to(j, "walk_length", cfg.node2vec.walk_length);
    get_to(j, "return_p", cfg.node2vec.return_p);
    get_to(j, "inout_q", cfg.node2vec.inout_q);
    get_to(j, "window", cfg.node2vec.window);
    get_to(j, "negatives", cfg.node2vec.negatives);
    get_to(j, "epochs", cfg.node2vec.epochs);
    get_to(j, "lr", cfg.node2vec.lr);
    get_to(j, "seed", cfg.node2vec.seed);
}

inline void parse_model(const json& j, RunConfig& cfg) {
    check_keys(j,
               {"d_a", "gnn_widths", "d_t", "n_mamba", "d_m", "d_state",
                "conv_k", "head_hidden", "k_bins", "residual", "fuse_act",
                "variant"},
               "model.");
    get_to(j, "d_a", cfg.model.d_a);
    get_to(j, "gnn_widths", cfg.model.gnn_widths);
    get_to(j, "d_t", cfg.model.d_t);
    get_to(j, "n_mamba", cfg.model.n_mamba);
    get_to(j, "d_m", cfg.model.d_m);
    get_to(j, "d_state", cfg.model.d_state);
    get_to(j, "conv_k", cfg.model.conv_k);
    get_to(j, "head_hidden", cfg.model.head_hidden);
    get_to(j, "k_bins", cfg.model.k_bins);
    get_to(j, "residual", cfg.model.residual);
    if (j.contains("fuse_act")) {
        const std::string act = j.at("fuse_act").get<std::string>();
        if (act == "relu")
            cfg.model.fuse_act = spatial::Activation::relu;
        else if (act == "tanh")
            cfg.model.fuse_act = spatial::Activation::tanh;
        else if (act == "sigmoid")
            cfg.model.fuse_act = spatial::Activation::sigmoid;
        else
            throw std::invalid_argument("config: fuse_act '" + act +
                                        "' not one of relu/tanh/sigmoid");
    }
    if (j.contains("variant"))
        cfg.model.variant =
            model::variant_from(j.at("variant").get<std::string>());
}

inline void parse_train(const json& j, RunConfig& cfg) {
    check_keys(j,
               {"lr", "l2", "momentum", "dropout", "epochs_max", "patience",
                "folds", "split", "seed", "min_pairs"},
               "train.");
    get_to(j, "lr", cfg.train.lr);
    get_to(j, "l2", cfg.train.l2);
    get_to(j, "momentum", cfg.train.momentum);
    get_to(j, "dropout", cfg.train.dropout);
    get_to(j, "epochs_max", cfg.train.epochs_max);
    get_to(j, "patience", cfg.train.patience);
    get_to(j, "folds", cfg.train.folds);
    get_to(j, "split", cfg.train.split);
    get_to(j, "seed", cfg.train.seed);
    get_to(j, "min_pairs", cfg.train.min_pairs);
}

inline void parse_channel(const json& j, RunConfig& cfg) {
    check_keys(j,
               {"bandwidth_hz", "noise_w", "pathloss_k0", "pathloss_d0_m",
                "pathloss_gamma"},
               "channel.");
    get_to(j, "bandwidth_hz", cfg.channel.bandwidth_hz);
    get_to(j, "noise_w", cfg.channel.noise_w);
    get_to(j, "pathloss_k0", cfg.channel.pathloss_k0);
    get_to(j, "pathloss_d0_m", cfg.channel.pathloss_d0_m);
    get_to(j, "pathloss_gamma", cfg.channel.pathloss_gamma);
}

}  // namespace detail

inline RunConfig from_json(const nlohmann::json& j) {
    RunConfig cfg;
    detail::check_keys(
        j, {"sim", "window", "alpha", "node2vec", "model", "train", "channel"},
        "");
    if (j.contains("sim")) detail::parse_sim(j.at("sim"), cfg);
    if (j.contains("window")) {
        detail::check_keys(j.at("window"), {"n_slots"}, "window.");
        detail::get_to(j.at("window"), "n_slots", cfg.window.n_slots);
    }
    if (j.contains("alpha")) {
        detail::check_keys(j.at("alpha"), {"a1", "a2"}, "alpha.");
        detail::get_to(j.at("alpha"), "a1", cfg.alpha1);
        detail::get_to(j.at("alpha"), "a2", cfg.alpha2);
    }
    if (j.contains("node2vec")) detail::parse_node2vec(j.at("node2vec"), cfg);
    if (j.contains("model")) detail::parse_model(j.at("model"), cfg);
    if (j.contains("train")) detail::parse_train(j.at("train"), cfg);
    if (j.contains("channel")) detail::parse_channel(j.at("channel"), cfg);

    if (cfg.window.n_slots < 1)
        throw std::invalid_argument("config: window.n_slots must be >= 1");
    if (cfg.alpha1 < 0.0 || cfg.alpha2 < 0.0 ||
        std::abs(cfg.alpha1 + cfg.alpha2 - 1.0) > 1e-12)
        throw std::invalid_argument(
            "config: alpha weights must be nonnegative and sum to 1");
    if (!(cfg.train.lr >= 0.0))
        throw std::invalid_argument("config: train.lr must be >= 0");
    if (cfg.train.dropout < 0.0 || cfg.train.dropout >= 1.0)
        throw std::invalid_argument("config: train.dropout must be in [0,1)");
    cfg.model.dropout = cfg.train.dropout;
    cfg.model.n_slots = cfg.window.n_slots;
    return cfg;
}

inline RunConfig load(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: parse error in '" + path +
                                 "': " + e.what());
    }
    return from_json(j);
}

}  // namespace gm::config
