#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "ifmatch/schedulers.hpp"

using namespace ifm;
using namespace ifm::sched;

namespace {

Tensor rows(int n, int c, std::vector<double> v) { return Tensor(Shape{n, c}, std::move(v)); }

}  // namespace

TEST_CASE("constant and flex thresholds") {
    const ThresholdState k = ThresholdState::make(ThresholdKind::Constant, 4);
    CHECK(threshold_value(k) == 0.95);

    ThresholdState f = ThresholdState::make(ThresholdKind::Flex, 2, 0.95, 20);
    CHECK_THROWS_AS(threshold_value(f), std::invalid_argument);
    f.sigma = {10, 5};
    CHECK(threshold_value(f, 0) == 0.95);
    CHECK(threshold_value(f, 1) == doctest::Approx(0.475).epsilon(1e-15));
    f.sigma = {7, 7};
    CHECK(threshold_value(f, 0) == 0.95);
    CHECK(threshold_value(f, 1) == 0.95);

    // Monotone in sigma_c with the others fixed.
    f.sigma = {10, 2};
    double last = -1.0;
    for (int s = 0; s <= 10; ++s) {
        f.sigma[1] = s;
        const double t = threshold_value(f, 1);
        CHECK(t >= last);
        last = t;
    }
}

TEST_CASE("flex update counts the latest confident label per unlabeled id") {
    ThresholdState f = ThresholdState::make(ThresholdKind::Flex, 3, 0.9, 4);
    const std::int64_t ids[] = {0, 1, 2};
    update(f, rows(3, 3, {0.95, 0.03, 0.02, 0.1, 0.1, 0.8, 0.02, 0.97, 0.01}), ids);
    CHECK(f.sigma == std::vector<double>{1, 1, 0});
    const std::int64_t again[] = {0};
    update(f, rows(1, 3, {0.01, 0.01, 0.98}), again);  // id 0 moves from class 0 to class 2
    CHECK(f.sigma == std::vector<double>{0, 1, 1});
    const std::int64_t bad[] = {9};
    CHECK_THROWS_AS(update(f, rows(1, 3, {1, 0, 0}), bad), std::out_of_range);
}

TEST_CASE("free threshold starts at 1/C and follows the EMA") {
    ThresholdState s = ThresholdState::make(ThresholdKind::Free, 4);
    for (int c = 0; c < 4; ++c) CHECK(threshold_value(s, c) == 0.25);
    update(s, rows(2, 4, {0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.7}), {});
    CHECK(s.mu == 0.999 * 0.25 + 0.001 * 0.7);
    CHECK(threshold_value(s, 0) == doctest::Approx(s.mu).epsilon(1e-15));
    CHECK(threshold_value(s, 1) < threshold_value(s, 0));
}

TEST_CASE("soft weights") {
    ThresholdState s = ThresholdState::make(ThresholdKind::Soft, 4);
    s.mu = 0.6;
    s.var = 0.04;
    CHECK(soft_weight(0.6, s) == 1.0);
    CHECK(soft_weight(0.9, s) == 1.0);
    CHECK(soft_weight(0.4, s) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    s.var = 1e-9;  // floored at 1e-6
    CHECK(soft_weight(0.0, s) < 1e-100);
    CHECK(soft_weight(0.599, s) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
    CHECK(gate_weight(s, 0.7, 0) == 1.0);
}

TEST_CASE("clamp is applied last and every emitted value stays in [0, 1]") {
    ThresholdState s = ThresholdState::make(ThresholdKind::Free, 3, 0.95, 0, Clamp{0.9, 1.0});
    CHECK(threshold_value(s, 0) == 0.9);
    RngStream rng(1, "sched");
    for (ThresholdKind kind : {ThresholdKind::Constant, ThresholdKind::Flex, ThresholdKind::Free, ThresholdKind::Soft}) {
        ThresholdState st = ThresholdState::make(kind, 3, 0.95, 16);
        for (int step = 0; step < 200; ++step) {
            Tensor p(Shape{4, 3});
            std::vector<std::int64_t> ids;
            for (int i = 0; i < 4; ++i) {
                double a = rng.uniform(), b = rng.uniform(), c = rng.uniform() * 10, t = a + b + c;
                p.at(i, 0) = a / t;
                p.at(i, 1) = b / t;
                p.at(i, 2) = c / t;
                ids.push_back(static_cast<std::int64_t>(rng.below(16)));
            }
            update(st, p, ids);
            for (int c = 0; c < 3; ++c) {
                const double t = threshold_value(st, c);
                CHECK(t >= 0.0);
                CHECK(t <= 1.0);
                const double g = gate_weight(st, rng.uniform(), c);
                CHECK(g >= 0.0);
                CHECK(g <= 1.0);
            }
            if (kind == ThresholdKind::Free || kind == ThresholdKind::Soft) {
                CHECK(st.mu >= 1.0 / 3 - 1e-15);
                CHECK(st.mu <= 1.0);
            }
        }
    }
    CHECK_THROWS(ThresholdState::make(ThresholdKind::Free, 3, 0.95, 0, Clamp{0.9, 0.8}));
}

TEST_CASE("distribution alignment") {
    DAState u = DAState::uniform(3);
    const Tensor p = rows(2, 3, {0.2, 0.5, 0.3, 0.6, 0.3, 0.1});
    const Tensor same = da_refine(p, u);
    for (std::size_t i = 0; i < p.numel(); ++i) CHECK(same[i] == doctest::Approx(p[i]).epsilon(1e-15));

    DAState skew = DAState::uniform(2);
    skew.p_bar = {0.8, 0.2};
    const Tensor r = da_refine(rows(1, 2, {0.8, 0.2}), skew);
    CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(0.5).epsilon(1e-15));
    // p_bar moves toward the unrefined batch mean.
    CHECK(skew.p_bar[0] == 0.999 * 0.8 + 0.001 * 0.8);

    RngStream rng(2, "da");
    DAState st = DAState::make({0.5, 0.3, 0.2});
    for (int t = 0; t < 50; ++t) {
        Tensor q(Shape{3, 3});
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) s += (q.at(i, c) = rng.uniform() + 0.01);
            for (int c = 0; c < 3; ++c) q.at(i, c) /= s;
        }
        const Tensor out = da_refine(q, st);
        for (int i = 0; i < 3; ++i) CHECK(std::fabs(out.at(i, 0) + out.at(i, 1) + out.at(i, 2) - 1.0) <= 1e-12);
    }
}

TEST_CASE("learning-rate schedule") {
    const LrSchedule s{0.03, 1000};
    CHECK(lr_at(s, 0) == 0.03);
    CHECK(std::fabs(lr_at(s, 1000) / 0.03 - std::cos(7.0 * std::numbers::pi / 16.0)) <= 1e-12);
    CHECK(lr_at(s, 1000) / 0.03 == doctest::Approx(0.19509).epsilon(1e-5));
    CHECK_THROWS_AS(lr_at(s, 1001), std::out_of_range);
    CHECK_THROWS_AS(lr_at(s, 8 * 1000 / 7 + 1), std::out_of_range);
    CHECK_THROWS_AS(lr_at(s, -1), std::out_of_range);
    for (long k = 0; k <= 1000; k += 50) CHECK(lr_at(s, k) > 0.0);
}

TEST_CASE("EMA of model parameters") {
    ModelSpec spec;
    spec.stage_widths = {2};
    spec.num_classes = 2;
    spec.height = spec.width = 4;
    Model live = Model::build(spec, 1);
    Model shadow = Model::build(spec, 2);
    const Model before = shadow;
    ema_update(shadow, live, 1.0);
    for (std::size_t i = 0; i < shadow.parameters().size(); ++i) {
        CHECK(shadow.parameters()[i].value.values() == before.parameters()[i].value.values());
    }
    ema_update(shadow, live, 0.0);
    for (std::size_t i = 0; i < shadow.parameters().size(); ++i) {
        CHECK(shadow.parameters()[i].value.values() == live.parameters()[i].value.values());
    }
    for (auto& p : shadow.parameters()) std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
    for (auto& p : live.parameters()) std::fill(p.value.data().begin(), p.value.data().end(), 1.0);
    EmaModel ema(shadow, 0.999);
    ema.update(live);
    for (const auto& p : ema.model().parameters())
        for (double v : p.value.data()) CHECK(std::fabs(v - 0.001) <= 1e-15);

    ModelSpec other = spec;
    other.stage_widths = {3};
    Model wrong = Model::build(other, 1);
    CHECK_THROWS_AS(ema_update(wrong, live, 0.5), ShapeError);
}

TEST_CASE("SGD with momentum and decay that skips normalization parameters") {
    ModelSpec spec;
    spec.stage_widths = {2};
    spec.num_classes = 2;
    spec.height = spec.width = 4;
    Model m = Model::build(spec, 3);
    Sgd opt(m, 0.9, 0.1);
    for (auto& p : m.parameters()) {
        p.value.ensure_grad();
        std::fill(p.value.grad().begin(), p.value.grad().end(), 1.0);
    }
    const Model before = m;
    opt.step(m, 0.5);
    opt.step(m, 0.5);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        const auto& p = m.parameters()[i];
        const double wd = p.weight_decay ? 0.1 : 0.0;
        CHECK(p.weight_decay == (p.name.find("norm") == std::string::npos));
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            double w = before.parameters()[i].value[j], v = 0.0;
            for (int k = 0; k < 2; ++k) {
                v = 0.9 * v + (1.0 + wd * w);
                w -= 0.5 * v;
            }
            CHECK(p.value[j] == w);
        }
    }
    const auto state = opt.state("optim/");
    Sgd fresh(m, 0.9, 0.1);
    fresh.load_state(state, "optim/");
    CHECK(fresh.state("optim/")[0].value.values() == state[0].value.values());
    CHECK_THROWS_AS(fresh.load_state({}, "optim/"), DataError);
}

TEST_CASE("threshold and DA state survive serialization") {
    ThresholdState s = ThresholdState::make(ThresholdKind::Flex, 3, 0.9, 5);
    const std::int64_t ids[] = {1, 4};
    update(s, rows(2, 3, {0.95, 0.03, 0.02, 0.01, 0.01, 0.98}), ids);
    ThresholdState r = ThresholdState::make(ThresholdKind::Flex, 3, 0.9, 5);
    load_threshold_state(r, threshold_state_tensors(s, "th/"), "th/");
    CHECK(r.sigma == s.sigma);
    CHECK(r.selected == s.selected);

    DAState d = DAState::uniform(3);
    da_refine(rows(1, 3, {0.7, 0.2, 0.1}), d);
    DAState e = DAState::uniform(3);
    load_da_state(e, da_state_tensors(d, "da/"), "da/");
    CHECK(e.p_bar == d.p_bar);
}
