#pragma once

// Task-specific resource trust and final collaborator selection. Everything
// here is deterministic arithmetic: transmission time from a log-distance
// channel model, computation time from task size x processing density over
// CPU frequency, a binary deadline gate, and the product with historical
// trust for ranking.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gm/simnet.hpp"

namespace gm::decide {

struct TaskSpec {
    double size_bits = 0.0;
    double density = 0.0;    // cycles per bit
    double max_time_s = 0.0;

    void validate() const {
        if (!(size_bits > 0.0) || !(density > 0.0) || !(max_time_s > 0.0))
            throw std::invalid_argument(
                "task: size_bits, density and max_time_s must be positive");
    }
};

// 1 MB = 8e6 bits (decimal megabyte).
inline double mb_to_bits(double mb) { return mb * 8e6; }

// Table-style presets: face recognition and virus scanning, 5 MB each.
inline TaskSpec face_recognition_task(double size_mb = 5.0) {
    return {mb_to_bits(size_mb), 2339.0, 80.0};
}

inline TaskSpec virus_scanning_task(double size_mb = 5.0) {
    return {mb_to_bits(size_mb), 32946.0, 700.0};
}

struct ChannelModel {
    double bandwidth_hz = 5e6;
    double noise_w = 1e-11;  // -80 dBm
    // Log-distance path loss: g(d) = k0 * (d0 / d)^gamma.
    double pathloss_k0 = 1e-6;
    double pathloss_d0_m = 1.0;
    double pathloss_gamma = 3.0;

    double gain(double distance_m) const {
        if (distance_m <= 0.0) return std::numeric_limits<double>::infinity();
        return pathloss_k0 *
               std::pow(pathloss_d0_m / distance_m, pathloss_gamma);
    }
};

inline double distance_m(const sim::Device& a, const sim::Device& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

// Shannon-rate transmission time; +inf marks an infeasible (zero-rate) link.
inline double transmission_time(const TaskSpec& task, const sim::Device& owner,
                                const sim::Device& candidate,
                                const ChannelModel& ch) {
    if (owner.id == candidate.id)
        throw std::invalid_argument("transmission_time: owner " +
                                    std::to_string(owner.id) +
                                    " equals candidate");
    const double g = ch.gain(distance_m(owner, candidate));
    if (std::isinf(g)) return 0.0;  // co-located devices
    const double snr = owner.tx_power_w * g / ch.noise_w;
    const double rate = ch.bandwidth_hz * std::log2(1.0 + snr);
    if (rate <= 0.0) return std::numeric_limits<double>::infinity();
    return task.size_bits / rate;
}

inline double computation_time(const TaskSpec& task,
                               const sim::Device& candidate) {
    if (!(candidate.cpu_hz > 0.0))
        throw std::invalid_argument("computation_time: cpu_hz must be > 0");
    return task.size_bits * task.density / candidate.cpu_hz;
}

// Inclusive deadline gate: 1 iff t_tra + t_com <= max_time_s.
inline int resource_trust(const TaskSpec& task, const sim::Device& owner,
                          const sim::Device& candidate,
                          const ChannelModel& ch) {
    const double total = transmission_time(task, owner, candidate, ch) +
                         computation_time(task, candidate);
    return total <= task.max_time_s ? 1 : 0;
}

struct TrustAssessment {
    int trustee_id = 0;
    double t_his = 0.0;
    int t_res = 0;
    double t_total = 0.0;  // t_his * t_res
    double t_tra_s = 0.0;
    double t_com_s = 0.0;
};

struct SelectionResult {
    std::optional<TrustAssessment> selected;  // empty: no trusted collaborator
    std::vector<TrustAssessment> ranking;     // all candidates, best first
};

// Ranks candidates by total trust; ties break on higher historical trust,
// then lower id. All-zero totals yield an explicit no-selection result.
inline SelectionResult select_collaborator(
    const sim::Device& owner, const std::vector<sim::Device>& candidates,
    const TaskSpec& task,
    const std::function<double(int /*trustee*/)>& historical_trust,
    const ChannelModel& ch) {
    if (candidates.empty())
        throw std::invalid_argument("select_collaborator: no candidates");
    SelectionResult result;
    result.ranking.reserve(candidates.size());
    for (const auto& c : candidates) {
        TrustAssessment a;
        a.trustee_id = c.id;
        a.t_his = historical_trust(c.id);
        a.t_tra_s = transmission_time(task, owner, c, ch);
        a.t_com_s = computation_time(task, c);
        a.t_res =
            a.t_tra_s + a.t_com_s <= task.max_time_s ? 1 : 0;
        a.t_total = a.t_his * static_cast<double>(a.t_res);
        result.ranking.push_back(a);
    }
    std::sort(result.ranking.begin(), result.ranking.end(),
              [](const TrustAssessment& x, const TrustAssessment& y) {
                  if (x.t_total != y.t_total) return x.t_total > y.t_total;
                  if (x.t_his != y.t_his) return x.t_his > y.t_his;
                  return x.trustee_id < y.trustee_id;
              });
    if (result.ranking.front().t_total > 0.0)
        result.selected = result.ranking.front();
    return result;
}

inline nlohmann::json selection_to_json(const sim::Device& owner,
                                        const TaskSpec& task,
                                        const SelectionResult& result) {
    nlohmann::json j;
    j["owner"] = owner.id;
    j["task"] = {{"size_bits", task.size_bits},
                 {"density", task.density},
                 {"max_time_s", task.max_time_s}};
    j["ranking"] = nlohmann::json::array();
    for (const auto& a : result.ranking) {
        j["ranking"].push_back({{"id", a.trustee_id},
                                {"t_his", a.t_his},
                                {"t_res", a.t_res},
                                {"t_tra", a.t_tra_s},
                                {"t_com", a.t_com_s},
                                {"t_total", a.t_total}});
    }
    if (result.selected)
        j["selected"] = result.selected->trustee_id;
    else
        j["selected"] = nullptr;
    return j;
}

}  // namespace gm::decide
