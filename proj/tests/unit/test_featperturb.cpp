#include <cmath>
#include <map>

#include "doctest.h"
#include "helpers.hpp"
#include "ifmatch/featperturb.hpp"

using namespace ifm;
using namespace ifm::feat;
using testing::random_tensor;
using testing::values;

namespace {

Tensor grid3x3() { return Tensor(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}); }

}  // namespace

TEST_CASE("channel dropout examples") {
    RngStream rng(1, "cd");
    const Tensor x = random_tensor(Shape{2, 3, 4, 4}, rng);
    const Tensor all = channel_dropout(x, {{1, 1, 1}});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(all[i] == 2.0 * x[i]);
    const Tensor none = channel_dropout(x, {{0, 0, 0}});
    for (double v : none.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(channel_dropout(x, {{1, 0}}), ShapeError);
}

TEST_CASE("channel dropout: mean over all 2^C masks equals the input") {
    // Dyadic inputs keep every partial sum exact, so equality is exact.
    RngStream rng(2, "cd");
    for (int C = 1; C <= 8; ++C) {
        Tensor x(Shape{2, C, 3, 3});
        for (double& v : x.data()) v = static_cast<double>(rng.between(-512, 512)) / 64.0;
        Tensor mean(x.shape());
        for (int m = 0; m < (1 << C); ++m) {
            ChannelDropParams p;
            for (int c = 0; c < C; ++c) p.keep.push_back(static_cast<std::uint8_t>((m >> c) & 1));
            const Tensor o = channel_dropout(x, p);
            for (std::size_t i = 0; i < o.numel(); ++i) mean[i] += o[i];
        }
        for (double& v : mean.data()) v /= (1 << C);
        CHECK(mean.values() == x.values());
        CHECK(oracle::bitwise_equal(oracle::channel_drop_mask_average(testing::to_grid(x)).v, x.values()));
    }
}

TEST_CASE("spatial dropout examples") {
    const Tensor x(Shape{1, 2, 4, 4}, 3.0);
    const Tensor y = spatial_dropout(x, {0, 0, 2, 2});
    int zeros = 0;
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) {
                if (h < 2 && w < 2) {
                    CHECK(y.at(0, c, h, w) == 0.0);
                    ++zeros;
                } else {
                    CHECK(y.at(0, c, h, w) == 3.0 * (16.0 / 12.0));
                }
            }
    CHECK(zeros == 8);

    const Tensor one(Shape{1, 1, 1, 1}, 0.7);
    CHECK(spatial_dropout(one, {0, 0, 0, 0}).values() == one.values());
    CHECK_THROWS_AS(spatial_dropout(x, {3, 0, 2, 2}), ShapeError);

    RngStream rng(3, "sd");
    for (int t = 0; t < 50; ++t) {
        const Tensor f = random_tensor(Shape{2, 3, 6, 5}, rng);
        const int h = 3, w = 2, px = rng.between(0, 3), py = rng.between(0, 3);
        CHECK(oracle::bitwise_equal(values(spatial_dropout(f, {px, py, h, w})),
                                    oracle::spatial_drop(testing::to_grid(f), px, py, h, w).v));
    }
}

TEST_CASE("translate examples") {
    const Tensor x = grid3x3();
    CHECK(translate(x, {Direction::Right, 0}).values() == x.values());
    const Tensor r = translate(x, {Direction::Right, 1});
    CHECK(r.values() == std::vector<double>{6, 1, 2, 6, 4, 5, 6, 7, 8});
    CHECK(oracle::bitwise_equal(r.values(), oracle::translate(testing::to_grid(x), oracle::Dir::Right, 1).v));

    RngStream rng(4, "tr");
    const Tensor f = random_tensor(Shape{2, 3, 4, 5}, rng);
    const Tensor full = translate(f, {Direction::Left, 5});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w) s += f.at(n, c, h, w);
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w) CHECK(full.at(n, c, h, w) == doctest::Approx(s / 20).epsilon(1e-14));
        }
    CHECK_THROWS_AS(translate(f, {Direction::Down, 5}), ShapeError);
}

TEST_CASE("shear examples") {
    const Tensor x = grid3x3();
    const ShearParams zero{Direction::Right, 0, shear_offsets(0, 3)};
    CHECK(shear(x, zero).values() == x.values());

    CHECK(shear_offsets(2, 3) == std::vector<int>{0, 1, 2});
    CHECK(shear_offsets(1, 3) == std::vector<int>{0, 1, 1});  // 0.5 rounds away from zero
    const Tensor s = shear(x, {Direction::Right, 2, shear_offsets(2, 3)});
    CHECK(oracle::bitwise_equal(s.values(), oracle::shear(testing::to_grid(x), oracle::Dir::Right, 2).v));
    // Row 0 is untouched, row 2 keeps only its first value at the far right.
    CHECK(s.at(0, 0, 0, 0) == 1.0);
    CHECK(s.at(0, 0, 2, 2) == 7.0);

    // Shearing back with the opposite direction restores every cell that never left the map.
    RngStream rng(5, "sh");
    for (Direction d : {Direction::Right, Direction::Left, Direction::Up, Direction::Down}) {
        const Tensor f = random_tensor(Shape{1, 2, 6, 7}, rng);
        const bool hz = horizontal(d);
        const int lines = hz ? 6 : 7, extent = hz ? 7 : 6;
        const int len = 3;
        const auto off = shear_offsets(len, lines);
        const Direction back = d == Direction::Right ? Direction::Left
                               : d == Direction::Left ? Direction::Right
                               : d == Direction::Up   ? Direction::Down
                                                      : Direction::Up;
        const Tensor there = shear(f, {d, len, off});
        const Tensor again = shear(there, {back, len, off});
        for (int c = 0; c < 2; ++c)
            for (int j = 0; j < lines; ++j)
                for (int i = 0; i < extent; ++i) {
                    // Position i along line j survives both moves iff it stays on the map.
                    const bool kept = (d == Direction::Right || d == Direction::Down) ? i + off[j] < extent : i - off[j] >= 0;
                    if (!kept) continue;
                    const int h = hz ? j : i, w = hz ? i : j;
                    CHECK(again.at(0, c, h, w) == f.at(0, c, h, w));
                }
    }
}

TEST_CASE("value smoothing examples") {
    const Tensor k(Shape{2, 3, 5, 5}, 0.3);
    for (int kernel : {3, 5})
        for (double alpha : {0.5, 0.77, 0.95}) CHECK(value_smooth(k, {kernel, alpha}).values() == k.values());

    const Tensor g(Shape{1, 1, 3, 3}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor s = value_smooth(g, {3, 1.0});
    CHECK(s.at(0, 0, 1, 1) == 4.0);
    CHECK(s.at(0, 0, 0, 0) == 2.0);   // mean of {0, 1, 3, 4}
    CHECK(s.at(0, 0, 2, 2) == 6.0);   // mean of {4, 5, 7, 8}
    CHECK(oracle::bitwise_equal(s.values(), oracle::window_smooth(testing::to_grid(g), 3, 1.0).v));
    CHECK(value_smooth(g, {3, 0.0}).values() == g.values());

    CHECK_THROWS_AS(value_smooth(g, {4, 0.5}), ShapeError);
    CHECK_THROWS_AS(value_smooth(g, {5, 0.5}), ShapeError);
}

TEST_CASE("sampling: pool restriction, eligibility and frequencies") {
    RngStream rng(6, "draw");
    const Strategy only[] = {Strategy::Translate};
    for (int i = 0; i < 50; ++i) CHECK(sample_draw(only, {4, 8, 8}, Intensity::Strong, rng).strategy == Strategy::Translate);

    const Strategy smooth[] = {Strategy::ValueSmooth};
    CHECK_THROWS_AS(sample_draw(smooth, {4, 2, 2}, Intensity::Weak, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_draw(std::span<const Strategy>{}, {4, 8, 8}, Intensity::Weak, rng), std::invalid_argument);

    std::map<Strategy, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[sample_draw(kAllStrategies, {4, 8, 8}, Intensity::Strong, rng).strategy];
    const double sigma = std::sqrt(n * 0.2 * 0.8);
    for (Strategy s : kAllStrategies) CHECK(std::fabs(counts[s] - n * 0.2) <= 5 * sigma);
}

TEST_CASE("sampled parameters stay inside their documented ranges") {
    RngStream rng(7, "ranges");
    const FeatureShape fs{6, 9, 7};
    for (int i = 0; i < 2000; ++i) {
        const PerturbDraw d = sample_draw(kAllStrategies, fs, Intensity::Strong, rng);
        validate(d, fs);
        if (const auto* p = std::get_if<SpatialDropParams>(&d.params)) {
            CHECK(p->h == 4);
            CHECK(p->w == 3);
        } else if (const auto* t = std::get_if<TranslateParams>(&d.params)) {
            CHECK(t->length <= (horizontal(t->direction) ? 7 : 9) / 2);
        } else if (const auto* v = std::get_if<ValueSmoothParams>(&d.params)) {
            CHECK(v->kernel % 2 == 1);
            CHECK(v->kernel <= 7);
            CHECK(v->alpha >= 0.5);
            CHECK(v->alpha < 0.95);
        } else if (const auto* s = std::get_if<ShearParams>(&d.params)) {
            CHECK(s->offsets == shear_offsets(s->length, horizontal(s->direction) ? 9 : 7));
        }
    }
}

TEST_CASE("replay, linearity and sample masks") {
    RngStream rng(8, "props");
    const FeatureShape fs{3, 6, 6};
    for (int i = 0; i < 100; ++i) {
        const PerturbDraw d = sample_draw(kAllStrategies, fs, Intensity::Strong, rng);
        const Tensor f = random_tensor(Shape{3, 3, 6, 6}, rng);
        const Tensor a = apply(f, d), b = apply(f, d);
        CHECK(oracle::bitwise_equal(values(a), values(b)));

        Tensor f2 = f;
        for (double& v : f2.data()) v *= 2.0;
        const Tensor a2 = apply(f2, d);
        for (std::size_t k = 0; k < a.numel(); ++k) CHECK(a2[k] == doctest::Approx(2.0 * a[k]).epsilon(1e-14));

        const std::vector<std::uint8_t> mask{1, 0, 1};
        const Tensor m = apply(f, d, mask);
        const std::size_t plane = 3 * 36;
        for (std::size_t k = 0; k < m.numel(); ++k) CHECK(m[k] == (k / plane == 1 ? f[k] : a[k]));
    }
    const PerturbDraw d = sample_draw(kAllStrategies, fs, Intensity::Weak, rng);
    const std::vector<std::uint8_t> short_mask{1};
    CHECK_THROWS_AS(apply(Tensor(Shape{2, 3, 6, 6}), d, short_mask), ShapeError);
}

TEST_CASE("gradient of sum(output) matches finite differences for every strategy") {
    RngStream rng(9, "grad");
    const FeatureShape fs{2, 5, 5};
    for (Strategy s : kAllStrategies) {
        const Strategy pool[] = {s};
        const PerturbDraw d = sample_draw(pool, fs, Intensity::Strong, rng);
        const Tensor f0 = random_tensor(Shape{2, 2, 5, 5}, rng);
        const std::vector<std::uint8_t> mask{1, 0};
        auto loss = [&](const std::vector<double>& xs) {
            double acc = 0.0;
            const Tensor out = apply(Tensor(f0.shape(), xs), d, mask);
            for (double v : out.data()) acc += v;
            return acc;
        };
        Tape tape;
        const Var x = tape.input(f0, true);
        tape.backward(sum(perturb(x, d, mask)));
        const auto analytic = tape.grad(x);
        const auto numeric = oracle::finite_difference(loss, values(f0), 1e-6);
        for (std::size_t i = 0; i < numeric.size(); ++i) CHECK(std::fabs(analytic[i] - numeric[i]) <= 1e-6);
    }
}

TEST_CASE("direction helpers") {
    CHECK(parse_direction("up") == Direction::Up);
    CHECK(parse_strategy("value_smooth") == Strategy::ValueSmooth);
    CHECK_THROWS(parse_strategy("rotate"));
}
