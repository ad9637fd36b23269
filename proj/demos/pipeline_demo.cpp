// Minimal end-to-end run on a small network: simulate records, train the
// trust model, and pick a collaborator for a face-recognition task.

#include <cstdio>

#include "gm/decision.hpp"
#include "gm/trainer.hpp"

int main() {
    gm::sim::SimConfig sim_cfg;
    sim_cfg.affinity_fraction = 0.25;
    gm::sim::Dataset ds = gm::sim::simulate(
        gm::sim::generate_network(24, 42, sim_cfg), 1500, sim_cfg);
    std::printf("simulated %zu records over %zu devices\n",
                ds.records.size(), ds.n_devices());

    const gm::snap::WindowSpec window{6};
    gm::model::GmDims dims;
    dims.d_a = 32;
    dims.gnn_widths = {16, 16};
    dims.d_m = 32;
    dims.d_state = 8;
    dims.n_mamba = 2;
    dims.head_hidden = 32;
    gm::embed::Node2vecConfig n2v;
    n2v.dim = 32;
    n2v.walks_per_node = 5;
    n2v.walk_length = 20;
    n2v.seed = 42;
    gm::train::TrainConfig train_cfg;
    train_cfg.epochs_max = 12;
    train_cfg.folds = 3;
    train_cfg.seed = 42;
    train_cfg.min_pairs = 20;

    const auto result =
        gm::train::train(ds, window, dims, train_cfg, n2v);
    std::printf("trained for %d epochs: test rmse %.4f, mae %.4f\n",
                result.selected_epochs, result.test_rmse, result.test_mae);

    // Score every other device as a collaborator for device 0.
    auto model = result.model;
    const auto snaps = gm::snap::build_snapshots(ds, window, 0.6, 0.4);
    gm::NoGrad ng;
    const auto states = model.slot_states(snaps);
    const gm::Tensor owner_emb =
        model.fused_embedding(states, 0, snaps.size());
    std::vector<gm::sim::Device> candidates(ds.devices.begin() + 1,
                                            ds.devices.end());
    const auto selection = gm::decide::select_collaborator(
        ds.devices[0], candidates, gm::decide::face_recognition_task(),
        [&](int id) {
            const gm::Tensor cand =
                model.fused_embedding(states, id, snaps.size());
            return gm::train::score_pair(owner_emb, cand, model).second;
        },
        gm::decide::ChannelModel{});

    if (selection.selected)
        std::printf("selected device %d (t_his %.3f, t_tra %.2fs, t_com "
                    "%.2fs)\n",
                    selection.selected->trustee_id, selection.selected->t_his,
                    selection.selected->t_tra_s, selection.selected->t_com_s);
    else
        std::printf("no trusted collaborator for this task\n");
    return 0;
}
