#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gm/decision.hpp"
#include "gm/rng.hpp"

using namespace gm::decide;
using gm::sim::Device;

namespace {

Device device_at(int id, double x, double y, double cpu_hz,
                 double tx_w = 0.1) {
    Device d;
    d.id = id;
    d.x = x;
    d.y = y;
    d.cpu_hz = cpu_hz;
    d.tx_power_w = tx_w;
    return d;
}

// Independent scalar re-derivation of both times (the brute-force oracle).
double oracle_total_time(double size_bits, double density, double cpu_hz,
                         double tx_w, double dist, const ChannelModel& ch) {
    const double g =
        ch.pathloss_k0 * std::pow(ch.pathloss_d0_m / dist, ch.pathloss_gamma);
    const double rate =
        ch.bandwidth_hz * std::log2(1.0 + tx_w * g / ch.noise_w);
    return size_bits / rate + size_bits * density / cpu_hz;
}

}  // namespace

TEST_CASE("transmission time on the worked channel example", "[decision]") {
    // 5 MB = 4e7 bits, p = 0.1 W, g = 1e-8, N0 = 1e-11 W, W = 5 MHz:
    // SNR = 100, r = 5e6 log2(101), t = 1.2015 s.
    ChannelModel ch;
    // Pick a distance whose gain is exactly 1e-8: (1/d)^3 = 1e-2.
    const double d = std::cbrt(100.0);
    Device owner = device_at(0, 0.0, 0.0, 2e9);
    Device cand = device_at(1, d, 0.0, 2e9);
    CHECK(ch.gain(d) == Catch::Approx(1e-8).epsilon(1e-12));
    const TaskSpec task{mb_to_bits(5.0), 2339.0, 80.0};
    const double t = transmission_time(task, owner, cand, ch);
    const double rate = 5e6 * std::log2(101.0);
    CHECK(t == Catch::Approx(4e7 / rate).epsilon(1e-12));
    CHECK(t == Catch::Approx(1.2015).margin(2e-4));

    // Doubling the size doubles the time.
    TaskSpec twice = task;
    twice.size_bits *= 2.0;
    CHECK(transmission_time(twice, owner, cand, ch) ==
          Catch::Approx(2.0 * t).epsilon(1e-12));

    // Monotone decreasing in the gain (closer candidate, higher gain).
    double prev = t;
    for (double dist : {4.0, 3.0, 2.0, 1.0, 0.5}) {
        Device c2 = device_at(2, dist, 0.0, 2e9);
        const double ti = transmission_time(task, owner, c2, ch);
        CHECK(ti < prev);
        prev = ti;
    }
    CHECK_THROWS_AS(transmission_time(task, owner, owner, ch),
                    std::invalid_argument);
}

TEST_CASE("computation time anchors", "[decision]") {
    Device cpu2 = device_at(1, 0, 0, 2e9);
    const double face =
        computation_time({mb_to_bits(5.0), 2339.0, 80.0}, cpu2);
    CHECK(face == Catch::Approx(46.78).epsilon(1e-9));
    const double virus =
        computation_time({mb_to_bits(5.0), 32946.0, 700.0}, cpu2);
    CHECK(virus == Catch::Approx(658.92).epsilon(1e-9));
    const double virus10 =
        computation_time({mb_to_bits(10.0), 32946.0, 700.0}, cpu2);
    CHECK(virus10 == Catch::Approx(1317.84).epsilon(1e-9));
    CHECK(virus10 > 700.0);  // over budget at any <= 2 GHz CPU
}

TEST_CASE("resource trust gate", "[decision]") {
    ChannelModel ch;
    const double d = std::cbrt(100.0);  // gain 1e-8, t_tra ~ 1.2015 s
    Device owner = device_at(0, 0.0, 0.0, 2e9);
    Device cand = device_at(1, d, 0.0, 2e9);

    // Face recognition 5 MB at 2 GHz: 1.2015 + 46.78 = 47.98 <= 80.
    CHECK(resource_trust(face_recognition_task(), owner, cand, ch) == 1);
    // Virus scanning 10 MB: t_com 1317.84 > 700 alone.
    CHECK(resource_trust(virus_scanning_task(10.0), owner, cand, ch) == 0);

    // Inclusive boundary: total exactly equal to the budget passes.
    TaskSpec task = face_recognition_task();
    const double total = transmission_time(task, owner, cand, ch) +
                         computation_time(task, cand);
    task.max_time_s = total;
    CHECK(resource_trust(task, owner, cand, ch) == 1);
    task.max_time_s = std::nextafter(total, 0.0);
    CHECK(resource_trust(task, owner, cand, ch) == 0);
}

TEST_CASE("gate agrees with the brute-force oracle on random cases",
          "[decision]") {
    ChannelModel ch;
    gm::SplitRng rng(2024);
    int agreements = 0;
    int n_cases = 0;
    for (int i = 0; i < 10000; ++i) {
        Device owner = device_at(0, rng.uniform(0.0, 1000.0),
                                 rng.uniform(0.0, 1000.0), 2e9,
                                 rng.uniform(0.01, 0.5));
        const double cpu = 2e9 * (1.0 + static_cast<double>(
                                            rng.uniform_index(3)));
        Device cand = device_at(1, rng.uniform(0.0, 1000.0),
                                rng.uniform(0.0, 1000.0), cpu);
        const TaskSpec task{mb_to_bits(rng.uniform(0.5, 20.0)),
                            rng.uniform(100.0, 40000.0),
                            rng.uniform(1.0, 2000.0)};
        const double dist = distance_m(owner, cand);
        if (dist == 0.0) continue;
        ++n_cases;
        const int want = oracle_total_time(task.size_bits, task.density, cpu,
                                           owner.tx_power_w, dist, ch) <=
                                 task.max_time_s
                             ? 1
                             : 0;
        if (resource_trust(task, owner, cand, ch) == want) ++agreements;
    }
    CHECK(agreements == n_cases);
    CHECK(n_cases == 10000);
}

TEST_CASE("budget monotonicity and density dominance", "[decision]") {
    ChannelModel ch;
    gm::SplitRng rng(55);
    std::vector<Device> devices;
    for (int i = 0; i < 120; ++i)
        devices.push_back(
            device_at(i, rng.uniform(0.0, 1000.0), rng.uniform(0.0, 1000.0),
                      2e9 * (1.0 + static_cast<double>(rng.uniform_index(3)))));
    const Device& owner = devices[0];
    const auto trusted_count = [&](double density, double budget) {
        int n = 0;
        for (std::size_t i = 1; i < devices.size(); ++i)
            n += resource_trust({mb_to_bits(10.0), density, budget}, owner,
                                devices[i], ch);
        return n;
    };
    int prev_face = -1, prev_virus = -1;
    for (double budget : {30.0, 60.0, 120.0, 250.0, 500.0, 1000.0, 2000.0}) {
        const int face = trusted_count(2339.0, budget);
        const int virus = trusted_count(32946.0, budget);
        CHECK(face >= prev_face);
        CHECK(virus >= prev_virus);
        CHECK(virus <= face);  // higher density strictly increases t_com
        prev_face = face;
        prev_virus = virus;
    }

    // Subset property at equal budgets: every virus-trusted device is
    // face-trusted.
    for (std::size_t i = 1; i < devices.size(); ++i) {
        const int virus =
            resource_trust({mb_to_bits(10.0), 32946.0, 500.0}, owner,
                           devices[i], ch);
        const int face = resource_trust({mb_to_bits(10.0), 2339.0, 500.0},
                                        owner, devices[i], ch);
        if (virus == 1) CHECK(face == 1);
    }
}

TEST_CASE("selection picks the highest total trust", "[decision]") {
    ChannelModel ch;
    Device owner = device_at(0, 0, 0, 2e9);
    Device a = device_at(1, 2, 0, 6e9);
    Device b = device_at(2, 3, 0, 6e9);

    // Resource gate dominates: A has higher history but fails the gate.
    {
        const auto his = [](int id) { return id == 1 ? 0.9 : 0.6; };
        Device slow_a = device_at(1, 900, 900, 2e9);
        TaskSpec tight{mb_to_bits(5.0), 2339.0, 47.0};  // < t_com at 2 GHz
        const auto result =
            select_collaborator(owner, {slow_a, b}, tight, his, ch);
        REQUIRE(result.selected.has_value());
        CHECK(result.selected->trustee_id == 2);
        CHECK(result.selected->t_total == Catch::Approx(0.6));
        CHECK(result.ranking.size() == 2);
        CHECK(result.ranking[1].t_res == 0);
    }

    // Single feasible candidate selects itself.
    {
        const auto result = select_collaborator(
            owner, {a}, face_recognition_task(),
            [](int) { return 0.42; }, ch);
        REQUIRE(result.selected.has_value());
        CHECK(result.selected->trustee_id == 1);
        CHECK(result.selected->t_total == Catch::Approx(0.42));
    }

    // Equal totals and equal history: lower id wins.
    {
        const auto result = select_collaborator(
            owner, {b, a}, face_recognition_task(),
            [](int) { return 0.8; }, ch);
        REQUIRE(result.selected.has_value());
        CHECK(result.selected->trustee_id == 1);
    }

    // All gated out: explicit no-collaborator result, not an error.
    {
        TaskSpec hopeless{mb_to_bits(10.0), 32946.0, 0.001};
        const auto result = select_collaborator(owner, {a, b}, hopeless,
                                                [](int) { return 0.9; }, ch);
        CHECK_FALSE(result.selected.has_value());
        CHECK(result.ranking.size() == 2);
        for (const auto& r : result.ranking) {
            CHECK(r.t_total == 0.0);
            CHECK(r.t_his == 0.9);
        }
    }

    CHECK_THROWS_AS(select_collaborator(owner, {}, face_recognition_task(),
                                        [](int) { return 1.0; }, ch),
                    std::invalid_argument);
}

TEST_CASE("selection serializes to the declared JSON layout", "[decision]") {
    ChannelModel ch;
    Device owner = device_at(0, 0, 0, 2e9);
    Device a = device_at(1, 5, 0, 4e9);
    const auto result = select_collaborator(
        owner, {a}, face_recognition_task(), [](int) { return 0.5; }, ch);
    const auto j = selection_to_json(owner, face_recognition_task(), result);
    CHECK(j["owner"] == 0);
    CHECK(j["selected"] == 1);
    REQUIRE(j["ranking"].size() == 1);
    for (const char* key :
         {"id", "t_his", "t_res", "t_tra", "t_com", "t_total"})
        CHECK(j["ranking"][0].contains(key));
    CHECK(j["task"].contains("size_bits"));
}

TEST_CASE("total trust never exceeds historical trust", "[decision]") {
    ChannelModel ch;
    gm::SplitRng rng(7);
    Device owner = device_at(0, 0, 0, 2e9);
    for (int rep = 0; rep < 200; ++rep) {
        Device cand = device_at(
            1, rng.uniform(1.0, 1000.0), rng.uniform(1.0, 1000.0),
            2e9 * (1.0 + static_cast<double>(rng.uniform_index(3))));
        const double his = rng.uniform();
        const TaskSpec task{mb_to_bits(rng.uniform(1.0, 10.0)),
                            rng.uniform(500.0, 35000.0),
                            rng.uniform(10.0, 1500.0)};
        const auto result = select_collaborator(owner, {cand}, task,
                                                [&](int) { return his; }, ch);
        const auto& r = result.ranking[0];
        CHECK(r.t_total <= r.t_his + 1e-15);
        if (r.t_res == 1) CHECK(r.t_total == r.t_his);
        CHECK((r.t_total >= 0.0 && r.t_total <= 1.0));
    }
}
