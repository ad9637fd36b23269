#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "gm/rng.hpp"
#include "gm/tensor.hpp"
#include "oracles.hpp"

using gm::Tensor;

namespace {

Tensor random_tensor(gm::Shape shape, gm::SplitRng& rng, bool grad = true) {
    std::vector<double> data(gm::detail::shape_size(shape));
    for (double& v : data) v = rng.normal(0.0, 1.0);
    return Tensor(std::move(shape), std::move(data), grad);
}

}  // namespace

TEST_CASE("elementwise activations at closed-form points", "[tensor]") {
    Tensor x(gm::Shape{3}, {0.0, 1.0, -1.0});
    CHECK(gm::silu(x).at(0) == 0.0);
    CHECK(gm::softplus(x).at(0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(gm::softplus(x).at(0) == Catch::Approx(0.693147).margin(1e-6));
    CHECK(gm::relu(x).values() == std::vector<double>{0.0, 1.0, 0.0});
    CHECK(gm::sigmoid(x).at(0) == 0.5);
    CHECK(gm::exp(x).at(1) == Catch::Approx(std::exp(1.0)));
    CHECK(gm::reciprocal(x).at(1) == 1.0);
}

TEST_CASE("causal conv matches brute-force oracle", "[tensor]") {
    // Spec example: conv([1,2,3], [1,1]) = [1,3,5].
    Tensor x(gm::Shape{3, 1}, {1.0, 2.0, 3.0});
    Tensor w(gm::Shape{2, 1}, {1.0, 1.0});
    auto y = gm::causal_conv1d(x, w);
    CHECK(y.values() == std::vector<double>{1.0, 3.0, 5.0});
    CHECK(y.values() ==
          oracle::causal_conv_1ch({1.0, 2.0, 3.0}, {1.0, 1.0}));

    gm::SplitRng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t s = 1 + rng.uniform_index(9);
        const std::size_t k = 1 + rng.uniform_index(5);
        std::vector<double> xs(s), ws(k);
        for (auto& v : xs) v = rng.normal();
        for (auto& v : ws) v = rng.normal();
        Tensor xt(gm::Shape{s, 1}, xs);
        Tensor wt(gm::Shape{k, 1}, ws);
        auto got = gm::causal_conv1d(xt, wt).values();
        auto want = oracle::causal_conv_1ch(xs, ws);
        for (std::size_t i = 0; i < s; ++i)
            CHECK(got[i] == Catch::Approx(want[i]).margin(1e-12));
    }
}

TEST_CASE("pooling and means over axes", "[tensor]") {
    Tensor m(gm::Shape{2, 2}, {1.0, 5.0, 3.0, 2.0});
    CHECK(gm::maxpool_over_axis(m, 0).values() ==
          std::vector<double>{3.0, 5.0});
    CHECK(gm::maxpool_over_axis(m, 1).values() ==
          std::vector<double>{5.0, 3.0});
    CHECK(gm::mean_over_axis(m, 0).values() ==
          std::vector<double>{2.0, 3.5});
}

TEST_CASE("sum of squares gradient", "[tensor]") {
    Tensor w(gm::Shape{1}, {3.0}, true);
    auto loss = gm::sum(gm::mul(w, w));
    CHECK(loss.item() == 9.0);
    gm::backward(loss);
    REQUIRE(w.grad().size() == 1);
    CHECK(w.grad()[0] == 6.0);
}

TEST_CASE("cross entropy of uniform logits is ln K", "[tensor]") {
    for (std::size_t k : {2ul, 10ul, 256ul}) {
        Tensor logits(gm::Shape{k}, 0.25);  // any constant vector is uniform
        auto loss = gm::softmax_cross_entropy(logits, {0});
        CHECK(loss.item() == Catch::Approx(std::log(double(k))).epsilon(1e-12));
    }
    Tensor l256(gm::Shape{256}, 0.0);
    CHECK(gm::softmax_cross_entropy(l256, {5}).item() ==
          Catch::Approx(5.545177).margin(1e-6));
}

TEST_CASE("cross entropy nonnegative, zero only at one-hot limit", "[tensor]") {
    gm::SplitRng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor logits = random_tensor({8}, rng, false);
        const int t = static_cast<int>(rng.uniform_index(8));
        CHECK(gm::softmax_cross_entropy(logits, {t}).item() >= 0.0);
    }
    Tensor sharp(gm::Shape{4}, {40.0, 0.0, 0.0, 0.0});
    CHECK(gm::softmax_cross_entropy(sharp, {0}).item() ==
          Catch::Approx(0.0).margin(1e-12));
    // Two-row batch averages the per-row losses.
    Tensor batch(gm::Shape{2, 3}, {1.0, 0.0, 0.0, 0.0, 2.0, 0.0});
    const double l0 =
        gm::softmax_cross_entropy(gm::Tensor(gm::Shape{3}, {1.0, 0.0, 0.0}),
                                  {0})
            .item();
    const double l1 =
        gm::softmax_cross_entropy(gm::Tensor(gm::Shape{3}, {0.0, 2.0, 0.0}),
                                  {2})
            .item();
    CHECK(gm::softmax_cross_entropy(batch, {0, 2}).item() ==
          Catch::Approx((l0 + l1) / 2.0).epsilon(1e-12));
}

TEST_CASE("broadcast add agrees with tiling oracle", "[tensor]") {
    gm::SplitRng rng(17);
    const std::vector<std::pair<gm::Shape, gm::Shape>> cases = {
        {{4}, {4}},       {{3, 4}, {4}},       {{2, 3, 4}, {4}},
        {{2, 3, 4}, {3, 4}}, {{5, 2}, {}},     {{7}, {}},
    };
    for (const auto& [big_s, small_s] : cases) {
        Tensor big = random_tensor(big_s, rng, false);
        Tensor small = random_tensor(small_s, rng, false);
        auto got = gm::add(big, small).values();
        auto want = oracle::tiled_add(
            big.values(),
            small.values().empty() ? std::vector<double>{0.0} : small.values());
        if (small.values().empty()) want = big.values();
        CHECK(got == want);
        // Symmetric argument order broadcasts the same way.
        CHECK(gm::add(small, big).values() == got);
    }
}

TEST_CASE("dropout identity cases", "[tensor]") {
    gm::SplitRng rng(5);
    Tensor x = random_tensor({4, 3}, rng, false);
    CHECK(gm::dropout(x, 0.0, true, 9).values() == x.values());
    CHECK(gm::dropout(x, 0.7, false, 9).values() == x.values());
    // Training-mode mask is seeded and scales kept entries by 1/(1-rate).
    auto a = gm::dropout(x, 0.5, true, 9).values();
    auto b = gm::dropout(x, 0.5, true, 9).values();
    CHECK(a == b);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK((a[i] == 0.0 || a[i] == Catch::Approx(2.0 * x.values()[i])));
}

TEST_CASE("shape errors carry both shapes", "[tensor]") {
    Tensor a(gm::Shape{2, 3});
    Tensor b(gm::Shape{4, 5});
    CHECK_THROWS_MATCHES(gm::matmul(a, b), std::invalid_argument,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("(2,3)") &&
                             Catch::Matchers::ContainsSubstring("(4,5)")));
    CHECK_THROWS_AS(gm::add(a, Tensor(gm::Shape{2})), std::invalid_argument);
    CHECK_THROWS_AS(gm::backward(Tensor(gm::Shape{3}, 1.0, true)),
                    std::invalid_argument);
}

TEST_CASE("gradient accumulates across fan-out", "[tensor]") {
    Tensor w(gm::Shape{2}, {1.0, 2.0}, true);
    auto a = gm::scalar_mul(w, 3.0);
    auto b = gm::mul(w, w);
    auto loss = gm::sum(gm::add(a, b));  // d/dw (3w + w^2) = 3 + 2w
    gm::backward(loss);
    CHECK(w.grad()[0] == 5.0);
    CHECK(w.grad()[1] == 7.0);
}

TEST_CASE("finite differences confirm every primitive", "[tensor]") {
    gm::SplitRng rng(101);

    const auto check = [&](const char* name, Tensor& param,
                           const std::function<Tensor()>& fwd) {
        param.zero_grad();
        auto loss = fwd();
        gm::backward(loss);
        gm::NoGrad ng;
        const double err = oracle::fd_max_rel_error(
            param, [&] { return fwd().item(); }, oracle::all_coords(param));
        INFO(name);
        CHECK(err <= 1e-5);
    };

    // A fixed second operand for binary ops.
    Tensor other = random_tensor({3, 4}, rng, false);
    Tensor vec = random_tensor({4}, rng, false);

    Tensor p1 = random_tensor({3, 4}, rng);
    check("add", p1, [&] { return gm::sum(gm::add(p1, vec)); });
    check("mul", p1, [&] { return gm::sum(gm::mul(p1, other)); });
    check("mul_broadcast", p1, [&] { return gm::sum(gm::mul(p1, vec)); });
    check("scalar_mul", p1, [&] { return gm::sum(gm::scalar_mul(p1, -1.7)); });
    check("exp", p1, [&] { return gm::sum(gm::exp(p1)); });
    check("relu", p1, [&] { return gm::sum(gm::relu(p1)); });
    check("sigmoid", p1, [&] { return gm::sum(gm::sigmoid(p1)); });
    check("silu", p1, [&] { return gm::sum(gm::silu(p1)); });
    check("softplus", p1, [&] { return gm::sum(gm::softplus(p1)); });
    check("tanh", p1, [&] { return gm::sum(gm::tanh_act(p1)); });
    check("transpose", p1,
          [&] { return gm::sum(gm::mul(gm::transpose(p1), gm::transpose(p1))); });
    check("maxpool0", p1, [&] { return gm::sum(gm::maxpool_over_axis(p1, 0)); });
    check("mean0", p1, [&] { return gm::sum(gm::mean_over_axis(p1, 0)); });
    check("slice_cols", p1, [&] { return gm::sum(gm::slice_cols(p1, 1, 2)); });
    check("dropout", p1,
          [&] { return gm::sum(gm::dropout(p1, 0.4, true, 77)); });

    Tensor pos = random_tensor({3, 4}, rng);
    for (double& v : pos.values()) v = 0.5 + std::abs(v);  // keep 1/x smooth
    check("reciprocal", pos, [&] { return gm::sum(gm::reciprocal(pos)); });

    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({5, 2}, rng);
    check("matmul_lhs", a, [&] { return gm::sum(gm::matmul(a, b)); });
    check("matmul_rhs", b, [&] { return gm::sum(gm::matmul(a, b)); });
    Tensor x5 = random_tensor({5}, rng);
    check("matvec", a, [&] { return gm::sum(gm::matmul(a, x5)); });
    check("matvec_vec", x5, [&] { return gm::sum(gm::matmul(a, x5)); });
    Tensor x3 = random_tensor({3}, rng);
    check("vecmat", x3, [&] { return gm::sum(gm::matmul(x3, a)); });

    Tensor cx = random_tensor({6, 2}, rng);
    Tensor ck = random_tensor({3, 2}, rng);
    check("conv_input", cx, [&] { return gm::sum(gm::causal_conv1d(cx, ck)); });
    check("conv_kernel", ck, [&] { return gm::sum(gm::causal_conv1d(cx, ck)); });

    Tensor c1 = random_tensor({2, 3}, rng);
    Tensor c2 = random_tensor({2, 2}, rng, false);
    check("concat", c1, [&] {
        return gm::sum(gm::mul(gm::concat({c1, c2}, 1), gm::concat({c1, c2}, 1)));
    });

    Tensor logits = random_tensor({4, 6}, rng);
    check("softmax_cross_entropy", logits, [&] {
        return gm::softmax_cross_entropy(logits, {1, 0, 5, 2});
    });

    Tensor table = random_tensor({5, 3}, rng);
    check("gather_rows", table, [&] {
        auto g = gm::gather_rows(table, {0, 2, 2, 4});
        return gm::sum(gm::mul(g, g));
    });
    check("row", table, [&] {
        auto r = gm::row(table, 2);
        return gm::sum(gm::mul(r, r));
    });
    check("segment_mean", table, [&] {
        auto g = gm::segment_mean(table, {1, 0, 1, 1, 0}, 3);
        return gm::sum(gm::mul(g, g));
    });

    Tensor sv = random_tensor({4}, rng);
    check("stack_rows", sv, [&] {
        auto s = gm::stack_rows({sv, sv});
        return gm::sum(gm::mul(s, s));
    });
    check("tile_rows", sv, [&] {
        auto t = gm::tile_rows(sv, 3);
        return gm::sum(gm::mul(t, t));
    });
}

TEST_CASE("segment mean handles empty segments", "[tensor]") {
    Tensor rows(gm::Shape{2, 2}, {1.0, 3.0, 3.0, 5.0});
    auto m = gm::segment_mean(rows, {2, 2}, 3);
    CHECK(m.values() == std::vector<double>{0.0, 0.0, 0.0, 0.0, 2.0, 4.0});
}

TEST_CASE("no-grad mode records no graph", "[tensor]") {
    Tensor w(gm::Shape{2}, {1.0, 2.0}, true);
    gm::NoGrad ng;
    auto y = gm::mul(w, w);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("checkpoint round-trips at full precision", "[tensor]") {
    gm::SplitRng rng(23);
    std::vector<gm::Parameter> params;
    params.push_back({"a.weight", random_tensor({3, 4}, rng)});
    params.push_back({"b.bias", random_tensor({7}, rng)});
    params.push_back({"c.scalar", Tensor::scalar(0.1 + 0.2)});
    std::ostringstream os;
    gm::write_checkpoint(os, params);
    std::istringstream is(os.str());
    auto loaded = gm::read_checkpoint(is);
    REQUIRE(loaded.size() == 3);
    for (const auto& p : params) {
        REQUIRE(loaded.count(p.name) == 1);
        CHECK(loaded.at(p.name).shape() == p.tensor.shape());
        CHECK(loaded.at(p.name).values() == p.tensor.values());  // bitwise
    }
    std::istringstream bad("GMCKPT v2\n");
    CHECK_THROWS_AS(gm::read_checkpoint(bad), std::runtime_error);
}
