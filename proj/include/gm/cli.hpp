#pragma once

// Command-line pipeline: simulate -> snapshot -> train -> evaluate -> select.
// Each subcommand reads/writes the file formats owned by the library
// modules; identical inputs and seeds give byte-identical outputs.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gm/config.hpp"
#include "gm/decision.hpp"
#include "gm/trainer.hpp"

namespace gm::cli {

namespace detail {

inline config::RunConfig load_config(const std::string& path,
                                     std::optional<std::uint64_t> seed) {
    config::RunConfig cfg = config::load(path);
    if (seed) cfg.override_seed(*seed);
    return cfg;
}

inline sim::Dataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
    return sim::read_dataset_jsonl(in);
}

inline std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error(std::string("cannot write ") + what +
                                 " '" + path + "'");
    return out;
}

// Rebuilds the model described by the config for this dataset and loads a
// checkpoint into it.
inline model::GmModel load_model(const std::string& path,
                                 const config::RunConfig& cfg,
                                 const sim::Dataset& ds) {
    model::GmDims dims = cfg.model;
    dims.n_devices = ds.n_devices();
    dims.n_slots = cfg.window.n_slots;
    model::GmModel m = model::init_model(
        dims, 0, Tensor(Shape{ds.n_devices(), dims.d_a}, 0.0));
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model '" + path + "'");
    m.load(in);
    return m;
}

// Fused embeddings over the first n_slots for every device, then historical
// trust of (owner, candidate) pairs through the head.
inline std::vector<double> historical_trust_row(
    model::GmModel& m, const std::vector<snap::TrustSnapshot>& snaps,
    std::size_t n_slots, int owner, const std::vector<int>& candidates) {
    NoGrad ng;
    const spatial::SlotStates states = m.slot_states(snaps);
    const Tensor owner_emb = m.fused_embedding(states, owner, n_slots);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (int id : candidates) {
        const Tensor cand_emb = m.fused_embedding(states, id, n_slots);
        out.push_back(
            train::score_pair(owner_emb, cand_emb, m).second);
    }
    return out;
}

}  // namespace detail

inline int cmd_simulate(const std::string& config_path,
                        std::optional<std::uint64_t> seed,
                        std::optional<int> devices, std::optional<int> tasks,
                        const std::string& out_path, bool verbose) {
    config::RunConfig cfg = detail::load_config(config_path, seed);
    if (devices) cfg.n_devices = *devices;
    if (tasks) cfg.n_tasks = *tasks;
    sim::Dataset ds = sim::generate_network(cfg.n_devices, cfg.seed, cfg.sim);
    ds = sim::simulate(std::move(ds), cfg.n_tasks, cfg.sim);
    auto out = detail::open_out(out_path, "dataset");
    sim::write_dataset_jsonl(out, ds);
    if (!out) throw std::runtime_error("write failed for '" + out_path + "'");
    std::cout << "wrote " << ds.records.size() << " records (seed "
              << ds.seed << ") to " << out_path << "\n";
    if (verbose)
        std::cerr << "devices=" << ds.n_devices()
                  << " horizon_s=" << ds.horizon_s << "\n";
    return 0;
}

inline int cmd_snapshot(const std::string& config_path,
                        std::optional<std::uint64_t> seed,
                        const std::string& data_path,
                        std::optional<int> slots,
                        const std::string& out_path) {
    config::RunConfig cfg = detail::load_config(config_path, seed);
    if (slots) cfg.window.n_slots = *slots;
    const sim::Dataset ds = detail::read_dataset(data_path);
    const auto snaps =
        snap::build_snapshots(ds, cfg.window, cfg.alpha1, cfg.alpha2);
    auto out = detail::open_out(out_path, "snapshots");
    snap::write_snapshots_jsonl(out, snaps);
    std::size_t edges = 0;
    for (const auto& s : snaps) edges += s.edges.size();
    std::cout << "wrote " << edges << " edges over " << snaps.size()
              << " slots to " << out_path << "\n";
    return 0;
}

inline int cmd_train(const std::string& config_path,
                     std::optional<std::uint64_t> seed,
                     const std::string& data_path,
                     const std::string& model_path,
                     const std::string& metrics_path,
                     std::optional<std::string> variant,
                     std::optional<int> epochs, bool verbose) {
    config::RunConfig cfg = detail::load_config(config_path, seed);
    if (variant) cfg.model.variant = model::variant_from(*variant);
    if (epochs) cfg.train.epochs_max = *epochs;
    const sim::Dataset ds = detail::read_dataset(data_path);
    train::TrainResult result =
        train::train(ds, cfg.window, cfg.model, cfg.train, cfg.node2vec,
                     cfg.alpha1, cfg.alpha2);
    {
        auto out = detail::open_out(model_path, "model checkpoint");
        result.model.save(out);
    }
    {
        auto out = detail::open_out(metrics_path, "metrics CSV");
        train::write_metrics_csv(out, result.rows);
    }
    std::cout << "trained " << model::to_string(cfg.model.variant) << " for "
              << result.selected_epochs << " epochs; test rmse "
              << gm::detail::format_double(result.test_rmse) << ", mae "
              << gm::detail::format_double(result.test_mae) << "\n";
    if (verbose)
        std::cerr << "train pairs=" << result.train_pairs.size()
                  << " test pairs=" << result.test_pairs.size() << "\n";
    return 0;
}

inline int cmd_evaluate(const std::string& config_path,
                        std::optional<std::uint64_t> seed,
                        const std::string& data_path,
                        const std::string& model_path,
                        const std::string& metrics_path) {
    config::RunConfig cfg = detail::load_config(config_path, seed);
    const sim::Dataset ds = detail::read_dataset(data_path);
    model::GmModel m = detail::load_model(model_path, cfg, ds);
    const auto rows = train::evaluate_per_slot(m, ds, cfg.window, cfg.alpha1,
                                               cfg.alpha2, cfg.train.l2);
    auto out = detail::open_out(metrics_path, "metrics CSV");
    train::write_slot_eval_csv(out, rows);
    std::cout << "evaluated " << rows.size() << " slots to " << metrics_path
              << "\n";
    return 0;
}

inline int cmd_select(const std::string& config_path,
                      std::optional<std::uint64_t> seed,
                      const std::string& data_path,
                      const std::string& model_path, int owner,
                      const std::string& preset,
                      const std::vector<double>& task_params) {
    config::RunConfig cfg = detail::load_config(config_path, seed);
    const sim::Dataset ds = detail::read_dataset(data_path);
    if (owner < 0 || static_cast<std::size_t>(owner) >= ds.n_devices())
        throw std::runtime_error("unknown owner id " + std::to_string(owner));

    decide::TaskSpec task;
    if (preset == "face") {
        task = decide::face_recognition_task();
    } else if (preset == "virus") {
        task = decide::virus_scanning_task();
    } else if (!preset.empty()) {
        throw std::runtime_error("unknown preset '" + preset +
                                 "' (face or virus)");
    } else if (task_params.size() == 3) {
        task = {decide::mb_to_bits(task_params[0]), task_params[1],
                task_params[2]};
    } else {
        throw std::runtime_error(
            "need --preset face|virus or --task size_mb,density,deadline");
    }
    task.validate();

    model::GmModel m = detail::load_model(model_path, cfg, ds);
    const auto snaps =
        snap::build_snapshots(ds, cfg.window, cfg.alpha1, cfg.alpha2);
    std::vector<int> candidate_ids;
    std::vector<sim::Device> candidates;
    for (const auto& d : ds.devices)
        if (d.id != owner) {
            candidate_ids.push_back(d.id);
            candidates.push_back(d);
        }
    const auto t_his = detail::historical_trust_row(
        m, snaps, snaps.size(), owner, candidate_ids);
    std::map<int, double> his_by_id;
    for (std::size_t i = 0; i < candidate_ids.size(); ++i)
        his_by_id[candidate_ids[i]] = t_his[i];
    const auto result = decide::select_collaborator(
        ds.devices[static_cast<std::size_t>(owner)], candidates, task,
        [&](int id) { return his_by_id.at(id); }, cfg.channel);
    std::cout << decide::selection_to_json(
                     ds.devices[static_cast<std::size_t>(owner)], task,
                     result)
                     .dump(2)
              << "\n";
    return 0;
}

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"spatiotemporal trust evaluation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "override every pipeline seed");
    app.add_flag("--verbose", verbose, "extra logging on stderr");

    auto* simulate = app.add_subcommand("simulate", "generate a dataset");
    std::string out_path = "dataset.jsonl";
    std::optional<int> devices, tasks;
    simulate->add_option("--out", out_path, "output dataset JSONL");
    simulate->add_option("--devices", devices, "number of devices");
    simulate->add_option("--tasks", tasks, "number of tasks");

    auto* snapshot = app.add_subcommand("snapshot", "build trust snapshots");
    std::string data_path, snap_out = "snapshots.jsonl";
    std::optional<int> slots;
    snapshot->add_option("--data", data_path, "dataset JSONL")->required();
    snapshot->add_option("--out", snap_out, "output snapshot JSONL");
    snapshot->add_option("--slots", slots, "number of windows");

    auto* train_cmd = app.add_subcommand("train", "train the trust model");
    std::string train_data, model_out = "model.gmckpt",
                metrics_out = "metrics.csv";
    std::optional<std::string> variant;
    std::optional<int> epochs;
    train_cmd->add_option("--data", train_data, "dataset JSONL")->required();
    train_cmd->add_option("--out-model", model_out, "checkpoint path");
    train_cmd->add_option("--metrics", metrics_out, "metrics CSV path");
    train_cmd->add_option("--variant", variant,
                          "full | spatial_only | temporal_only");
    train_cmd->add_option("--epochs", epochs, "override epochs_max");

    auto* evaluate = app.add_subcommand("evaluate", "per-slot trust RMSE");
    std::string eval_data, eval_model, eval_metrics = "eval.csv";
    evaluate->add_option("--data", eval_data, "dataset JSONL")->required();
    evaluate->add_option("--model", eval_model, "checkpoint path")
        ->required();
    evaluate->add_option("--metrics", eval_metrics, "output CSV path");

    auto* select = app.add_subcommand("select", "choose a collaborator");
    std::string sel_data, sel_model, preset;
    int owner = 0;
    std::vector<double> task_params;
    select->add_option("--data", sel_data, "dataset JSONL")->required();
    select->add_option("--model", sel_model, "checkpoint path")->required();
    select->add_option("--owner", owner, "task owner id")->required();
    select->add_option("--preset", preset, "face | virus");
    select->add_option("--task", task_params,
                       "size_mb density deadline_s")
        ->expected(3)
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (simulate->parsed())
            return cmd_simulate(config_path, seed, devices, tasks, out_path,
                                verbose);
        if (snapshot->parsed())
            return cmd_snapshot(config_path, seed, data_path, slots,
                                snap_out);
        if (train_cmd->parsed())
            return cmd_train(config_path, seed, train_data, model_out,
                             metrics_out, variant, epochs, verbose);
        if (evaluate->parsed())
            return cmd_evaluate(config_path, seed, eval_data, eval_model,
                                eval_metrics);
        if (select->parsed())
            return cmd_select(config_path, seed, sel_data, sel_model, owner,
                              preset, task_params);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("gm");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace gm::cli
