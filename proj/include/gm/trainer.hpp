#pragma once

// Training protocol for the trust model. Labels are next-window trust
// values: snapshots 1..S-1 feed the model and slot S supplies the targets,
// discretized to K bins. Pairs split 80/20; five-fold cross-validation over
// the training pairs picks the epoch count by early stopping; the final
// model retrains on all training pairs for that many epochs.
//
// The optimizer is full-batch SGD with momentum and decoupled L2: the
// momentum buffer sees only the data gradient, the decay term 2*l2*theta is
// applied directly in the update. Reported losses include the l2*|theta|^2
// objective term.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gm/model.hpp"
#include "gm/snapshot.hpp"

namespace gm::train {

struct TrainConfig {
    double lr = 1e-2;
    double l2 = 1e-5;
    double momentum = 0.9;
    double dropout = 0.0;
    int epochs_max = 60;
    int patience = 10;
    int folds = 5;
    double split = 0.8;  // training fraction at the pair level
    std::uint64_t seed = 0;
    std::size_t min_pairs = 50;
};

struct PairExample {
    int trustor = 0;
    int trustee = 0;
    int target_bin = 0;
    double target_value = 0.0;
};

inline PairExample make_pair_example(int trustor, int trustee, double value,
                                     std::size_t k_bins) {
    PairExample p;
    p.trustor = trustor;
    p.trustee = trustee;
    p.target_value = value;
    p.target_bin = static_cast<int>(
        std::lround(value * static_cast<double>(k_bins - 1)));
    return p;
}

// rmse / mae over value-scale predictions.
inline std::pair<double, double> metrics(const std::vector<double>& pred,
                                         const std::vector<double>& target) {
    if (pred.empty() || pred.size() != target.size())
        throw std::invalid_argument(
            "metrics: " + std::to_string(pred.size()) + " predictions vs " +
            std::to_string(target.size()) + " targets");
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        se += d * d;
        ae += std::abs(d);
    }
    const double n = static_cast<double>(pred.size());
    return {std::sqrt(se / n), ae / n};
}

// Pair scoring: head logits plus the argmax-bin decode on [0,1].
inline std::pair<Tensor, double> score_pair(const Tensor& emb_i,
                                            const Tensor& emb_j,
                                            const model::GmModel& m) {
    Tensor logits = m.head_logits_single(emb_i, emb_j);
    return {logits, model::value_from_logits(logits.values())};
}

// Objective: mean cross-entropy plus l2 * sum of squared trainable
// parameters.
inline Tensor loss(const Tensor& logits, const std::vector<int>& target_bins,
                   const std::vector<Parameter>& trainables, double l2) {
    if (target_bins.empty())
        throw std::invalid_argument("loss: empty batch");
    Tensor total = softmax_cross_entropy(logits, target_bins);
    if (l2 > 0.0)
        for (const auto& p : trainables)
            total = add(total,
                        scalar_mul(sum(mul(p.tensor, p.tensor)), l2));
    return total;
}

inline double l2_term(const std::vector<Parameter>& params, double l2) {
    if (l2 <= 0.0) return 0.0;
    double acc = 0.0;
    for (const auto& p : params)
        for (double v : p.tensor.values()) acc += v * v;
    return l2 * acc;
}

// SGD with momentum; weight decay applied decoupled from the momentum
// buffer (update -= lr * (v + 2*l2*theta)).
class SgdMomentum {
public:
    SgdMomentum(std::vector<Parameter> params, double lr, double momentum,
                double l2)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), l2_(l2) {
        velocity_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i)
            velocity_[i].assign(params_[i].tensor.size(), 0.0);
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& t = params_[i].tensor;
            const auto& g = t.grad();
            auto& v = velocity_[i];
            auto& val = t.values();
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double gj = j < g.size() ? g[j] : 0.0;
                v[j] = momentum_ * v[j] + gj;
                val[j] -= lr_ * (v[j] + 2.0 * l2_ * val[j]);
            }
        }
    }

    const std::vector<Parameter>& params() const { return params_; }

private:
    std::vector<Parameter> params_;
    double lr_, momentum_, l2_;
    std::vector<std::vector<double>> velocity_;
};

struct MetricRow {
    std::string fold;   // "0".."4" or "final"
    std::string epoch;  // number or "-"
    std::string split;  // "train" / "val" / "test"
    double rmse = 0.0;
    double mae = 0.0;
    double loss = 0.0;
};

inline void write_metrics_csv(std::ostream& os,
                              const std::vector<MetricRow>& rows) {
    os << "fold,epoch,split,rmse,mae,loss\n";
    for (const auto& r : rows)
        os << r.fold << "," << r.epoch << "," << r.split << ","
           << gm::detail::format_double(r.rmse) << ","
           << gm::detail::format_double(r.mae) << ","
           << gm::detail::format_double(r.loss) << "\n";
}

struct TrainResult {
    model::GmModel model;
    std::vector<MetricRow> rows;
    int selected_epochs = 0;
    double test_rmse = 0.0;
    double test_mae = 0.0;
    double test_loss = 0.0;
    std::vector<PairExample> train_pairs;
    std::vector<PairExample> test_pairs;
};

namespace detail {

// Forward pass over a pair batch: fused embeddings once per device, then the
// head on stacked pair rows. Returns (N x K) logits.
inline Tensor batch_logits(const model::GmModel& m,
                           const spatial::SlotStates& states,
                           const std::vector<PairExample>& pairs,
                           std::size_t n_feature_slots, bool train_mode,
                           std::uint64_t dropout_seed) {
    std::map<int, Tensor> fused;
    for (const auto& p : pairs)
        for (int id : {p.trustor, p.trustee})
            if (!fused.count(id))
                fused.emplace(id,
                              m.fused_embedding(states, id, n_feature_slots,
                                                train_mode, dropout_seed));
    std::vector<Tensor> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs)
        rows.push_back(
            concat({fused.at(p.trustor), fused.at(p.trustee)}, 0));
    return m.head_logits(stack_rows(rows));
}

inline std::vector<int> bins_of(const std::vector<PairExample>& pairs) {
    std::vector<int> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.target_bin);
    return out;
}

inline std::vector<double> values_of(const std::vector<PairExample>& pairs) {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.target_value);
    return out;
}

inline std::vector<double> decode_all(const Tensor& logits) {
    std::vector<double> out;
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(logits.values().begin() + i * k,
                                logits.values().begin() + (i + 1) * k);
        out.push_back(model::value_from_logits(row));
    }
    return out;
}

struct EvalOutcome {
    double rmse, mae, loss;
};

inline EvalOutcome evaluate_pairs(model::GmModel& m,
                                  const spatial::SlotStates& states,
                                  const std::vector<PairExample>& pairs,
                                  std::size_t n_feature_slots, double l2) {
    NoGrad ng;
    Tensor logits = batch_logits(m, states, pairs, n_feature_slots, false, 0);
    const auto [rmse, mae] = metrics(decode_all(logits), values_of(pairs));
    const double ce =
        softmax_cross_entropy(logits, bins_of(pairs)).item();
    return {rmse, mae, ce + l2_term(m.trainable_parameters(), l2)};
}

// One model trained for up to `epochs` epochs; returns per-epoch train /
// validation rows and the best-validation epoch (1-based).
struct FoldRun {
    std::vector<MetricRow> rows;
    int best_epoch = 0;
};

inline FoldRun run_training(model::GmModel& m,
                            const std::vector<snap::TrustSnapshot>& feature,
                            const std::vector<PairExample>& train_pairs,
                            const std::vector<PairExample>& val_pairs,
                            const TrainConfig& cfg, const std::string& fold) {
    FoldRun run;
    SgdMomentum opt(m.trainable_parameters(), cfg.lr, cfg.momentum, cfg.l2);
    const std::vector<int> bins = bins_of(train_pairs);
    const std::vector<double> values = values_of(train_pairs);
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        const std::uint64_t drop_seed =
            cfg.seed + 7919ull * static_cast<std::uint64_t>(epoch);
        opt.zero_grad();
        const spatial::SlotStates states =
            m.slot_states(feature, cfg.dropout > 0.0, drop_seed);
        Tensor logits = batch_logits(m, states, train_pairs, feature.size(),
                                     cfg.dropout > 0.0, drop_seed);
        Tensor ce = softmax_cross_entropy(logits, bins);
        const double objective =
            ce.item() + l2_term(opt.params(), cfg.l2);
        backward(ce);
        opt.step();

        const auto [rmse, mae] = metrics(decode_all(logits), values);
        run.rows.push_back({fold, std::to_string(epoch), "train", rmse, mae,
                            objective});
        if (!val_pairs.empty()) {
            const spatial::SlotStates eval_states = m.slot_states(feature);
            const EvalOutcome val = evaluate_pairs(m, eval_states, val_pairs,
                                                   feature.size(), cfg.l2);
            run.rows.push_back({fold, std::to_string(epoch), "val", val.rmse,
                                val.mae, val.loss});
            if (val.loss < best_val - 1e-12) {
                best_val = val.loss;
                run.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }
    if (run.best_epoch == 0) run.best_epoch = cfg.epochs_max;
    return run;
}

}  // namespace detail

// Labeled pairs for one target slot, ordered by (trustor, trustee).
inline std::vector<PairExample> labeled_pairs(const sim::Dataset& ds,
                                              const snap::WindowSpec& window,
                                              int target_slot, double alpha1,
                                              double alpha2,
                                              std::size_t k_bins) {
    const auto labels = sim::ground_truth_labels(ds, window, alpha1, alpha2);
    std::vector<PairExample> out;
    for (const auto& [key, value] : labels) {
        const auto [i, j, s] = key;
        if (s == target_slot)
            out.push_back(make_pair_example(i, j, value, k_bins));
    }
    return out;
}

// Full training protocol. `node_table` may carry a precomputed node2vec
// table; otherwise it is trained here.
inline TrainResult train(const sim::Dataset& ds,
                         const snap::WindowSpec& window, model::GmDims dims,
                         const TrainConfig& cfg,
                         const embed::Node2vecConfig& n2v_cfg,
                         double alpha1 = 0.6, double alpha2 = 0.4,
                         std::optional<Tensor> node_table = std::nullopt) {
    const auto snaps = snap::build_snapshots(ds, window, alpha1, alpha2);
    const int target_slot = window.n_slots - 1;
    auto pairs =
        labeled_pairs(ds, window, target_slot, alpha1, alpha2, dims.k_bins);
    if (pairs.size() < cfg.min_pairs)
        throw std::runtime_error(
            "train: only " + std::to_string(pairs.size()) +
            " labeled pairs in the target slot, need at least " +
            std::to_string(cfg.min_pairs));

    dims.n_devices = ds.n_devices();
    dims.n_slots = window.n_slots;
    Tensor node_emb =
        node_table ? *node_table
                   : embed::node2vec(snaps, ds.n_devices(), n2v_cfg).matrix;

    const std::vector<snap::TrustSnapshot> feature(snaps.begin(),
                                                   snaps.end() - 1);

    SplitRng rng(cfg.seed ^ 0x53504Cull);
    rng.shuffle(pairs);
    const std::size_t n_train = static_cast<std::size_t>(
        std::lround(cfg.split * static_cast<double>(pairs.size())));
    TrainResult result;
    result.train_pairs.assign(pairs.begin(),
                              pairs.begin() + static_cast<long>(n_train));
    result.test_pairs.assign(pairs.begin() + static_cast<long>(n_train),
                             pairs.end());

    model::GmModel proto = model::init_model(dims, cfg.seed, node_emb);
    model::calibrate_scales(proto, feature);

    // Cross-validation for the epoch count.
    if (cfg.epochs_max > 0) {
        std::vector<int> best_epochs;
        for (int f = 0; f < cfg.folds; ++f) {
            std::vector<PairExample> fold_train, fold_val;
            for (std::size_t i = 0; i < result.train_pairs.size(); ++i) {
                if (static_cast<int>(i % static_cast<std::size_t>(
                                             cfg.folds)) == f)
                    fold_val.push_back(result.train_pairs[i]);
                else
                    fold_train.push_back(result.train_pairs[i]);
            }
            model::GmModel m = proto.clone();
            const auto run = detail::run_training(
                m, feature, fold_train, fold_val, cfg, std::to_string(f));
            for (const auto& r : run.rows) result.rows.push_back(r);
            best_epochs.push_back(run.best_epoch);
        }
        double mean_epochs = 0.0;
        for (int e : best_epochs) mean_epochs += e;
        mean_epochs /= static_cast<double>(best_epochs.size());
        result.selected_epochs =
            std::max(1, static_cast<int>(std::lround(mean_epochs)));
    }

    // Final retrain on every training pair for the selected epoch count.
    result.model = proto.clone();
    if (result.selected_epochs > 0) {
        TrainConfig final_cfg = cfg;
        final_cfg.epochs_max = result.selected_epochs;
        final_cfg.patience = result.selected_epochs + 1;  // no early stop
        const auto run = detail::run_training(result.model, feature,
                                              result.train_pairs, {},
                                              final_cfg, "final");
        for (const auto& r : run.rows) result.rows.push_back(r);
    }

    const spatial::SlotStates states = result.model.slot_states(feature);
    const detail::EvalOutcome test = detail::evaluate_pairs(
        result.model, states, result.test_pairs, feature.size(), cfg.l2);
    result.test_rmse = test.rmse;
    result.test_mae = test.mae;
    result.test_loss = test.loss;
    result.rows.push_back(
        {"final", "-", "test", test.rmse, test.mae, test.loss});
    return result;
}

// ---------------------------------------------------------------------------
// per-slot evaluation (trust prediction quality across time)

struct SlotEval {
    int slot = 0;
    std::size_t n_pairs = 0;
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> loss;
};

// Evaluates per-slot predictions for target slots 1..S-1: labels come from
// slot s, features from slots 0..s-1. `exclude` removes pair identities
// (e.g. the training pairs) from every slot.
inline std::vector<SlotEval> evaluate_per_slot(
    model::GmModel& m, const sim::Dataset& ds, const snap::WindowSpec& window,
    double alpha1, double alpha2, double l2,
    const std::set<std::pair<int, int>>& exclude = {}) {
    const auto snaps = snap::build_snapshots(ds, window, alpha1, alpha2);
    const spatial::SlotStates states = m.slot_states(snaps);
    std::vector<SlotEval> out;
    for (int s = 1; s < window.n_slots; ++s) {
        auto pairs =
            labeled_pairs(ds, window, s, alpha1, alpha2, m.dims.k_bins);
        std::erase_if(pairs, [&](const PairExample& p) {
            return exclude.count({p.trustor, p.trustee}) > 0;
        });
        if (pairs.empty()) continue;
        const auto r = detail::evaluate_pairs(m, states, pairs,
                                              static_cast<std::size_t>(s),
                                              l2);
        out.push_back({s, pairs.size(), r.rmse, r.mae, r.loss});
    }
    return out;
}

// Stub-friendly variant: a predictor maps (trustor, trustee, target slot) to
// a trust value.
using Predictor = std::function<double(int, int, int)>;

inline std::vector<SlotEval> evaluate_per_slot_with(
    const sim::Dataset& ds, const snap::WindowSpec& window, double alpha1,
    double alpha2, const Predictor& predict, std::size_t k_bins = 256) {
    std::vector<SlotEval> out;
    for (int s = 1; s < window.n_slots; ++s) {
        const auto pairs =
            labeled_pairs(ds, window, s, alpha1, alpha2, k_bins);
        if (pairs.empty()) continue;
        std::vector<double> pred, target;
        for (const auto& p : pairs) {
            pred.push_back(predict(p.trustor, p.trustee, s));
            target.push_back(p.target_value);
        }
        const auto [rmse, mae] = metrics(pred, target);
        out.push_back({s, pairs.size(), rmse, mae, std::nullopt});
    }
    return out;
}

inline void write_slot_eval_csv(std::ostream& os,
                                const std::vector<SlotEval>& evals) {
    os << "slot,n_pairs,split,rmse,mae,loss\n";
    double se = 0.0, ae = 0.0;
    std::size_t n = 0;
    for (const auto& e : evals) {
        os << e.slot << "," << e.n_pairs << ",eval,"
           << gm::detail::format_double(e.rmse) << ","
           << gm::detail::format_double(e.mae) << ",";
        if (e.loss)
            os << gm::detail::format_double(*e.loss);
        else
            os << "-";
        os << "\n";
        se += e.rmse * e.rmse * static_cast<double>(e.n_pairs);
        ae += e.mae * static_cast<double>(e.n_pairs);
        n += e.n_pairs;
    }
    if (n > 0) {
        os << "overall," << n << ",eval,"
           << gm::detail::format_double(
                  std::sqrt(se / static_cast<double>(n)))
           << "," << gm::detail::format_double(ae / static_cast<double>(n))
           << ",-\n";
    }
}

}  // namespace gm::train
