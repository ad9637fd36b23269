#pragma once

// Seeded closed-form simulator of a collaborative device network. Generates
// the collaboration-record datasets the rest of the pipeline consumes.
// All draws come from SplitRng (see rng.hpp) in a fixed order, so a given
// (n_devices, seed, config) always produces the same dataset, byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gm/rng.hpp"
#include "gm/tensor.hpp"  // format_double

namespace gm::sim {

enum class ProfileKind { stable, degrading, oscillating, malicious };

inline const char* to_string(ProfileKind k) {
    switch (k) {
        case ProfileKind::stable: return "stable";
        case ProfileKind::degrading: return "degrading";
        case ProfileKind::oscillating: return "oscillating";
        case ProfileKind::malicious: return "malicious";
    }
    return "stable";
}

inline ProfileKind profile_kind_from(const std::string& s) {
    if (s == "stable") return ProfileKind::stable;
    if (s == "degrading") return ProfileKind::degrading;
    if (s == "oscillating") return ProfileKind::oscillating;
    if (s == "malicious") return ProfileKind::malicious;
    throw std::invalid_argument("unknown profile kind '" + s + "'");
}

struct DeviceProfile {
    double base_reliability = 0.9;  // chance a delegated task succeeds
    double loss_mean = 0.05;
    double loss_jitter = 0.02;
    // Per-window additive change to base_reliability. For `degrading` it is
    // the slope; for `oscillating` it is the swing amplitude.
    double drift = 0.0;
    ProfileKind kind = ProfileKind::stable;
};

struct Device {
    int id = 0;
    double cpu_hz = 2e9;
    double tx_power_w = 0.1;
    double x = 0.0, y = 0.0;  // meters
    DeviceProfile profile;
};

struct CollaborationRecord {
    int trustor_id = 0;
    int trustee_id = 0;
    double time = 0.0;     // seconds since epoch start
    double packet_loss = 0.0;
    int outcome = 0;       // task success in {0,1}
};

struct Dataset {
    std::vector<Device> devices;
    std::vector<CollaborationRecord> records;  // sorted by time
    double horizon_s = 86400.0;
    std::uint64_t seed = 0;

    std::size_t n_devices() const { return devices.size(); }
};

struct ProfileMix {
    double stable = 0.60;
    double degrading = 0.15;
    double oscillating = 0.15;
    double malicious = 0.10;
};

struct SimConfig {
    double arena_side_m = 1000.0;
    std::vector<double> cpu_choices_hz = {2e9, 4e9, 6e9};
    double tx_power_w = 0.1;
    double horizon_s = 86400.0;
    ProfileMix mix;
    // Each device collaborates with this fraction of its peers (at least 1).
    double affinity_fraction = 0.05;
    // Lognormal sigma of per-partner pick weights; larger values concentrate
    // a trustor's tasks on a few favorite partners.
    double partner_weight_sigma = 1.5;
    // Profiles evolve on this many equal windows across the horizon.
    int profile_windows = 10;
    double oscillation_period_windows = 5.0;
};

// Reliability of a device during profile window w.
inline double reliability_at(const DeviceProfile& p, int w,
                             const SimConfig& cfg) {
    double r = p.base_reliability;
    switch (p.kind) {
        case ProfileKind::stable:
        case ProfileKind::malicious:
            break;
        case ProfileKind::degrading:
            r += p.drift * static_cast<double>(w);
            break;
        case ProfileKind::oscillating:
            r += p.drift * std::sin(2.0 * M_PI * static_cast<double>(w) /
                                    cfg.oscillation_period_windows);
            break;
    }
    return std::clamp(r, 0.0, 1.0);
}

inline int profile_window_of(double t, const Dataset& ds,
                             const SimConfig& cfg) {
    const double frac = t / ds.horizon_s;
    int w = static_cast<int>(std::floor(frac * cfg.profile_windows));
    return std::clamp(w, 0, cfg.profile_windows - 1);
}

namespace detail {

inline DeviceProfile draw_profile(SplitRng& rng, const ProfileMix& mix) {
    const std::size_t kind_idx = rng.weighted_index(
        {mix.stable, mix.degrading, mix.oscillating, mix.malicious});
    DeviceProfile p;
    switch (kind_idx) {
        case 0:
            p.kind = ProfileKind::stable;
            p.base_reliability = rng.uniform(0.93, 0.995);
            p.loss_mean = rng.uniform(0.02, 0.08);
            p.loss_jitter = 0.02;
            p.drift = 0.0;
            break;
        case 1:
            p.kind = ProfileKind::degrading;
            p.base_reliability = rng.uniform(0.88, 0.96);
            p.loss_mean = rng.uniform(0.08, 0.18);
            p.loss_jitter = 0.03;
            p.drift = -rng.uniform(0.08, 0.11);
            break;
        case 2:
            p.kind = ProfileKind::oscillating;
            p.base_reliability = rng.uniform(0.45, 0.60);
            p.loss_mean = rng.uniform(0.05, 0.15);
            p.loss_jitter = 0.03;
            p.drift = rng.uniform(0.35, 0.45);
            break;
        default:
            p.kind = ProfileKind::malicious;
            p.base_reliability = rng.uniform(0.02, 0.12);
            p.loss_mean = rng.uniform(0.35, 0.60);
            p.loss_jitter = 0.05;
            p.drift = 0.0;
            break;
    }
    return p;
}

}  // namespace detail

inline Dataset generate_network(int n_devices, std::uint64_t seed,
                                const SimConfig& cfg = {}) {
    if (n_devices < 2)
        throw std::invalid_argument("generate_network: need at least 2 "
                                    "devices, got " +
                                    std::to_string(n_devices));
    Dataset ds;
    ds.horizon_s = cfg.horizon_s;
    ds.seed = seed;
    SplitRng rng(seed);
    ds.devices.reserve(static_cast<std::size_t>(n_devices));
    for (int i = 0; i < n_devices; ++i) {
        Device d;
        d.id = i;
        d.x = rng.uniform(0.0, cfg.arena_side_m);
        d.y = rng.uniform(0.0, cfg.arena_side_m);
        d.cpu_hz = cfg.cpu_choices_hz[rng.uniform_index(
            cfg.cpu_choices_hz.size())];
        d.tx_power_w = cfg.tx_power_w;
        d.profile = detail::draw_profile(rng, cfg.mix);
        ds.devices.push_back(d);
    }
    return ds;
}

struct AffinityGraph {
    // partners[i] / weights[i]: candidate trustees for trustor i.
    std::vector<std::vector<int>> partners;
    std::vector<std::vector<double>> weights;
};

// Static affinity structure, reconstructed from the dataset seed so a loaded
// dataset can be extended deterministically.
inline AffinityGraph affinity_graph(const Dataset& ds, const SimConfig& cfg) {
    const std::size_t n = ds.n_devices();
    SplitRng rng(ds.seed ^ 0x9E3779B97F4A7C15ull);
    AffinityGraph g;
    g.partners.resize(n);
    g.weights.resize(n);
    const std::size_t n_aff = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::lround(cfg.affinity_fraction *
                           static_cast<double>(n - 1))));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<int> pool;
        pool.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) pool.push_back(static_cast<int>(j));
        rng.shuffle(pool);
        pool.resize(std::min(n_aff, pool.size()));
        g.partners[i] = std::move(pool);
        g.weights[i].reserve(g.partners[i].size());
        for (std::size_t k = 0; k < g.partners[i].size(); ++k)
            g.weights[i].push_back(
                std::exp(rng.normal(0.0, cfg.partner_weight_sigma)));
    }
    return g;
}

// Appends n_tasks records: trustor uniform, trustee drawn from the trustor's
// affinity partners, loss ~ clamp(Normal(mean, jitter), 0, 1), outcome ~
// Bernoulli(reliability in the record's profile window). Task times are
// evenly spaced over the horizon.
inline Dataset simulate(Dataset ds, int n_tasks, const SimConfig& cfg = {}) {
    if (ds.devices.empty())
        throw std::runtime_error("simulate: dataset has no devices");
    if (n_tasks <= 0) return ds;
    const AffinityGraph aff = affinity_graph(ds, cfg);
    SplitRng rng(ds.seed ^ (0x53494D4E4554ull +
                            0x9E3779B9ull * ds.records.size()));
    const std::size_t n = ds.n_devices();
    ds.records.reserve(ds.records.size() + static_cast<std::size_t>(n_tasks));
    for (int k = 0; k < n_tasks; ++k) {
        CollaborationRecord r;
        r.time = (static_cast<double>(k) + 0.5) * ds.horizon_s /
                 static_cast<double>(n_tasks);
        r.trustor_id = static_cast<int>(rng.uniform_index(n));
        const auto& partners = aff.partners[static_cast<std::size_t>(
            r.trustor_id)];
        const auto& weights = aff.weights[static_cast<std::size_t>(
            r.trustor_id)];
        r.trustee_id = partners[rng.weighted_index(weights)];
        const DeviceProfile& prof =
            ds.devices[static_cast<std::size_t>(r.trustee_id)].profile;
        r.packet_loss = std::clamp(rng.normal(prof.loss_mean,
                                              prof.loss_jitter),
                                   0.0, 1.0);
        const int w = profile_window_of(r.time, ds, cfg);
        r.outcome = rng.bernoulli(reliability_at(prof, w, cfg)) ? 1 : 0;
        ds.records.push_back(r);
    }
    std::stable_sort(ds.records.begin(), ds.records.end(),
                     [](const CollaborationRecord& a,
                        const CollaborationRecord& b) {
                         return a.time < b.time;
                     });
    return ds;
}

// ---------------------------------------------------------------------------
// JSONL serialization
//
// Line 1: header object {"version","seed","horizon_s","devices":[...]}
// Then one record object per line: {"src","dst","t","loss","out"}.
// "t" is printed with six decimal places; other doubles use the shortest
// round-trip decimal form.

namespace detail {

inline std::string fmt_time(double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", t);
    return buf;
}

inline std::string fmt(double v) { return gm::detail::format_double(v); }

}  // namespace detail

inline void write_dataset_jsonl(std::ostream& os, const Dataset& ds) {
    os << "{\"version\":1,\"seed\":" << ds.seed
       << ",\"horizon_s\":" << detail::fmt(ds.horizon_s) << ",\"devices\":[";
    for (std::size_t i = 0; i < ds.devices.size(); ++i) {
        const Device& d = ds.devices[i];
        if (i) os << ",";
        os << "{\"id\":" << d.id << ",\"cpu_hz\":" << detail::fmt(d.cpu_hz)
           << ",\"tx_power_w\":" << detail::fmt(d.tx_power_w)
           << ",\"x\":" << detail::fmt(d.x) << ",\"y\":" << detail::fmt(d.y)
           << ",\"profile\":{\"kind\":\"" << to_string(d.profile.kind)
           << "\",\"base_reliability\":"
           << detail::fmt(d.profile.base_reliability)
           << ",\"loss_mean\":" << detail::fmt(d.profile.loss_mean)
           << ",\"loss_jitter\":" << detail::fmt(d.profile.loss_jitter)
           << ",\"drift\":" << detail::fmt(d.profile.drift) << "}}";
    }
    os << "]}\n";
    for (const CollaborationRecord& r : ds.records) {
        os << "{\"src\":" << r.trustor_id << ",\"dst\":" << r.trustee_id
           << ",\"t\":" << detail::fmt_time(r.time)
           << ",\"loss\":" << detail::fmt(r.packet_loss)
           << ",\"out\":" << r.outcome << "}\n";
    }
}

inline Dataset read_dataset_jsonl(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    const auto fail = [&](const std::string& what) -> std::runtime_error {
        return std::runtime_error("dataset line " + std::to_string(lineno) +
                                  ": " + what);
    };
    if (!std::getline(is, line)) throw std::runtime_error("dataset: empty file");
    lineno = 1;
    Dataset ds;
    try {
        const auto h = nlohmann::json::parse(line);
        ds.seed = h.at("seed").get<std::uint64_t>();
        ds.horizon_s = h.at("horizon_s").get<double>();
        for (const auto& jd : h.at("devices")) {
            Device d;
            d.id = jd.at("id").get<int>();
            d.cpu_hz = jd.at("cpu_hz").get<double>();
            d.tx_power_w = jd.at("tx_power_w").get<double>();
            d.x = jd.at("x").get<double>();
            d.y = jd.at("y").get<double>();
            const auto& jp = jd.at("profile");
            d.profile.kind =
                profile_kind_from(jp.at("kind").get<std::string>());
            d.profile.base_reliability =
                jp.at("base_reliability").get<double>();
            d.profile.loss_mean = jp.at("loss_mean").get<double>();
            d.profile.loss_jitter = jp.at("loss_jitter").get<double>();
            d.profile.drift = jp.at("drift").get<double>();
            ds.devices.push_back(d);
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(e.what());
    }
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        CollaborationRecord r;
        try {
            const auto j = nlohmann::json::parse(line);
            r.trustor_id = j.at("src").get<int>();
            r.trustee_id = j.at("dst").get<int>();
            r.time = j.at("t").get<double>();
            r.packet_loss = j.at("loss").get<double>();
            r.outcome = j.at("out").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw fail(e.what());
        }
        if (r.trustor_id == r.trustee_id)
            throw fail("trustor equals trustee");
        if (r.trustor_id < 0 ||
            static_cast<std::size_t>(r.trustor_id) >= ds.n_devices() ||
            r.trustee_id < 0 ||
            static_cast<std::size_t>(r.trustee_id) >= ds.n_devices())
            throw fail("device id out of range");
        if (r.packet_loss < 0.0 || r.packet_loss > 1.0)
            throw fail("loss outside [0,1]");
        if (r.outcome != 0 && r.outcome != 1)
            throw fail("out not in {0,1}");
        ds.records.push_back(r);
    }
    return ds;
}

}  // namespace gm::sim
