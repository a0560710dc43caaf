#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "ifmatch/autodiff.hpp"
#include "ifmatch/errors.hpp"

using namespace ifm;
using testing::random_tensor;

TEST_CASE("shape basics and errors") {
    CHECK(Shape{2, 3, 4, 5}.numel() == 120);
    CHECK(Shape{}.rank() == 0);
    CHECK_THROWS_AS(Shape({1, 0}), ShapeError);
    CHECK_THROWS_AS(Shape({1, 2, 3, 4, 5}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input exactly") {
    RngStream rng(1, "t");
    Tape tape(false);
    const Tensor x = random_tensor(Shape{2, 3, 4, 5}, rng);
    Tensor k(Shape{3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) k.at(c, c, 0, 0) = 1.0;
    const Var y = conv2d(tape.constant(x), tape.constant(k), 1, 0);
    CHECK(y.value().values() == x.values());
}

TEST_CASE("conv2d: constant input with an all-ones 3x3 kernel gives 9c") {
    Tape tape(false);
    const Var y = conv2d(tape.constant(Tensor(Shape{1, 1, 5, 5}, 0.5)), tape.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (double v : y.value().data()) CHECK(v == 4.5);
}

TEST_CASE("conv2d matches the nested-loop oracle on 200 random cases") {
    RngStream rng(7, "conv");
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.between(1, 2), ci = rng.between(1, 3), co = rng.between(1, 3);
        const int k = 2 * rng.between(0, 1) + 1, stride = rng.between(1, 2), pad = rng.between(0, 1);
        const int h = rng.between(k, 7), w = rng.between(k, 7);
        const Tensor x = random_tensor(Shape{n, ci, h, w}, rng);
        const Tensor kern = random_tensor(Shape{co, ci, k, k}, rng);
        Tape tape(false);
        const Tensor y = conv2d(tape.constant(x), tape.constant(kern), stride, pad).value();
        const oracle::Grid ref = oracle::conv2d(testing::to_grid(x), testing::to_grid(kern), stride, pad);
        REQUIRE(y.shape() == Shape{ref.n, ref.c, ref.h, ref.w});
        for (std::size_t i = 0; i < ref.v.size(); ++i) worst = std::max(worst, std::fabs(ref.v[i] - y[i]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("conv2d rejects a channel mismatch and names the dimension") {
    Tape tape(false);
    try {
        conv2d(tape.constant(Tensor(Shape{1, 2, 4, 4})), tape.constant(Tensor(Shape{1, 3, 3, 3})), 1, 0);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("dim 1") != std::string::npos);
    }
}

TEST_CASE("non-finite values are rejected") {
    Tape tape(false);
    Tensor bad(Shape{1, 1, 3, 3}, 1.0);
    bad[4] = std::nan("");
    CHECK_THROWS_AS(conv2d(tape.constant(bad), tape.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)), 1, 0), NumericError);
}

TEST_CASE("relu and softmax examples") {
    Tape tape(false);
    const Var r = relu(tape.constant(Tensor(Shape{1, 4}, std::vector<double>{-2.0, -0.5, 0.5, 2.0})));
    CHECK(r.value().values() == std::vector<double>{0.0, 0.0, 0.5, 2.0});

    const Tensor eq = softmax_rows(Tensor(Shape{1, 4}, 3.0));
    for (double v : eq.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    const Tensor p = softmax_rows(Tensor(Shape{1, 4}, std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0), std::log(4.0)}));
    CHECK(p[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(p[3] == doctest::Approx(0.4).epsilon(1e-12));

    RngStream rng(3, "softmax");
    const Tensor q = softmax_rows(random_tensor(Shape{16, 7}, rng, -30.0, 30.0));
    for (int r = 0; r < 16; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) {
            CHECK(q.at(r, c) > 0.0);
            CHECK(q.at(r, c) < 1.0);
            s += q.at(r, c);
        }
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("cross-entropy examples") {
    Tape tape(false);
    const std::vector<int> cls{2};
    const Tensor target = one_hot(cls, 4);
    CHECK(cross_entropy(target, tape.constant(target)).value().item() == 0.0);
    const double uniform = cross_entropy(target, tape.constant(Tensor(Shape{1, 4}, 0.25))).value().item();
    CHECK(uniform == doctest::Approx(1.3862944).epsilon(1e-7));

    // Soft target equal to the prediction gives the entropy, summed directly here.
    const Tensor p(Shape{1, 3}, std::vector<double>{0.2, 0.5, 0.3});
    double entropy = 0.0;
    for (double v : p.data()) entropy -= v * std::log(v);
    CHECK(cross_entropy(p, tape.constant(p)).value().item() == doctest::Approx(entropy).epsilon(1e-14));

    CHECK_THROWS_AS(cross_entropy(one_hot(cls, 3), tape.constant(Tensor(Shape{1, 4}, 0.25))), ShapeError);
}

TEST_CASE("backward: analytic gradients and misuse errors") {
    Tensor w(Shape{2, 3}, std::vector<double>{1, -2, 3, 0.5, -0.25, 4});
    w.set_requires_grad(true);
    {
        Tape tape;
        tape.backward(sum(tape.parameter(w)));
        for (double g : w.grad()) CHECK(g == 1.0);
    }
    w.zero_grad();
    {
        Tape tape;
        const Var p = tape.parameter(w);
        tape.backward(scale(sum(mul(p, p)), 0.5));
        for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == w[i]);
        CHECK_THROWS_AS(tape.backward(sum(p)), std::logic_error);
    }
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.parameter(w)), ShapeError);
}

TEST_CASE("detached constants receive no gradient") {
    Tensor w(Shape{1, 3}, std::vector<double>{0.1, 0.2, 0.3});
    w.set_requires_grad(true);
    Tape tape;
    const Var c = tape.constant(Tensor(Shape{1, 3}, 2.0));
    const Var x = tape.input(Tensor(Shape{1, 3}, 1.0), false);
    tape.backward(sum(mul(mul(tape.parameter(w), c), x)));
    CHECK(w.grad()[0] == 2.0);
    CHECK(tape.grad(c).empty());
    CHECK(tape.grad(x).empty());
}

namespace {

// Gradient of sum(r .* op(x)) with respect to x, checked against the oracle's
// central differences on inputs in [-1, 1].
template <class Op>
void check_chain_rule(Shape shape, Op op, std::uint64_t seed, double tol = 1e-5) {
    RngStream rng(seed, "chain");
    const Tensor x0 = random_tensor(shape, rng);
    Tensor probe;
    {
        Tape tape(false);
        probe = random_tensor(op(tape.constant(x0)).shape(), rng);
    }
    auto loss = [&](const std::vector<double>& xs) {
        Tape tape(false);
        const Var y = op(tape.constant(Tensor(shape, xs)));
        double s = 0.0;
        for (std::size_t i = 0; i < y.value().numel(); ++i) s += probe[i] * y.value()[i];
        return s;
    };
    Tape tape;
    const Var x = tape.input(x0, true);
    tape.backward(sum(mul(op(x), tape.constant(probe))));
    const auto analytic = tape.grad(x);
    const auto numeric = oracle::finite_difference(loss, testing::values(x0), 1e-6);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
    CHECK(rel <= tol);
}

}  // namespace

TEST_CASE("chain rule of each primitive matches finite differences") {
    RngStream rng(11, "weights");
    const Tensor kernel = random_tensor(Shape{3, 2, 3, 3}, rng);
    const Tensor gamma = random_tensor(Shape{2}, rng, 0.5, 1.5), beta = random_tensor(Shape{2}, rng);
    const Tensor fc_w = random_tensor(Shape{4, 12}, rng), fc_b = random_tensor(Shape{4}, rng);
    const Tensor target = softmax_rows(random_tensor(Shape{2, 4}, rng));

    SUBCASE("conv2d") {
        check_chain_rule(Shape{2, 2, 5, 5}, [&](Var x) { return conv2d(x, x.tape().constant(kernel), 2, 1); }, 1);
    }
    SUBCASE("normalize (sample)") {
        check_chain_rule(Shape{2, 2, 3, 3}, [&](Var x) {
            return normalize(x, x.tape().constant(gamma), x.tape().constant(beta), NormMode::Sample);
        }, 2);
    }
    SUBCASE("normalize (batch)") {
        check_chain_rule(Shape{3, 2, 3, 3}, [&](Var x) {
            return normalize(x, x.tape().constant(gamma), x.tape().constant(beta), NormMode::Batch);
        }, 3);
    }
    SUBCASE("relu, pool, affine") {
        check_chain_rule(Shape{2, 12, 2, 2}, [&](Var x) {
            return affine(global_avg_pool(relu(x)), x.tape().constant(fc_w), x.tape().constant(fc_b));
        }, 4);
    }
    SUBCASE("softmax and cross-entropy") {
        check_chain_rule(Shape{2, 4}, [&](Var x) { return cross_entropy_rows(target, softmax(x)); }, 5);
    }
    SUBCASE("flatten, add, weighted sum") {
        const std::vector<double> wts{0.5, 2.0};
        check_chain_rule(Shape{2, 3, 2, 2}, [&](Var x) {
            const Var f = flatten(add(x, scale(x, 0.25)));
            return weighted_sum(cross_entropy_rows(Tensor(Shape{2, 12}, 1.0 / 12), softmax(f)), wts, 2.0);
        }, 6);
    }
}

TEST_CASE("identical tapes give bitwise-identical values and gradients") {
    RngStream rng(5, "det");
    const Tensor x0 = random_tensor(Shape{2, 2, 4, 4}, rng);
    Tensor k = random_tensor(Shape{2, 2, 3, 3}, rng);
    k.set_requires_grad(true);
    std::vector<double> first_grad, first_value;
    for (int run = 0; run < 2; ++run) {
        k.zero_grad();
        Tape tape;
        const Var loss = sum(relu(conv2d(tape.constant(x0), tape.parameter(k), 1, 1)));
        tape.backward(loss);
        if (run == 0) {
            first_grad.assign(k.grad().begin(), k.grad().end());
            first_value = {loss.value().item()};
        } else {
            CHECK(oracle::bitwise_equal(first_grad, {k.grad().begin(), k.grad().end()}));
            CHECK(oracle::bitwise_equal(first_value, {loss.value().item()}));
        }
    }
}
