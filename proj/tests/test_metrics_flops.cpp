#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msscanet/errors.hpp"
#include "msscanet/flops.hpp"
#include "msscanet/metrics.hpp"
#include "msscanet/model.hpp"
#include "msscanet/rng.hpp"
#include "oracles.hpp"

using namespace msscanet;
using oracles::random_tensor;

TEST_CASE("plcc closed forms") {
    std::vector<double> x = {1, 2, 3, 4};
    std::vector<double> y;
    for (double v : x) y.push_back(2 * v + 1);
    CHECK(plcc(x, y) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> neg;
    for (double v : x) neg.push_back(-v);
    CHECK(plcc(x, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    CHECK(plcc({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));

    CHECK_THROWS_AS(plcc({1, 1, 1}, {1, 2, 3}), DataError);
    CHECK_THROWS_AS(plcc({1, 2}, {1, 2}), DataError);
}

TEST_CASE("plcc is invariant under positive affine transforms") {
    Rng rng(1);
    for (int it = 0; it < 10; ++it) {
        std::vector<double> x, y;
        for (int i = 0; i < 12; ++i) {
            x.push_back(rng.uniform(-2, 2));
            y.push_back(rng.uniform(-2, 2));
        }
        const double base = plcc(x, y);
        std::vector<double> x2;
        for (double v : x) x2.push_back(3.7 * v + 11.0);
        CHECK(plcc(x2, y) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("srocc closed forms and monotone invariance") {
    std::vector<double> x = {0.2, 1.0, 2.5, 3.0, 7.0};
    std::vector<double> ex;
    for (double v : x) ex.push_back(std::exp(v));
    CHECK(srocc(x, ex) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK(srocc({1, 2, 3}, {3, 1, 2}) == doctest::Approx(-0.5).epsilon(1e-12));

    // ties: x = (1,1,2) -> ranks (1.5, 1.5, 3)
    auto ranks = average_ranks({1, 1, 2});
    CHECK(ranks == std::vector<double>{1.5, 1.5, 3});
    const double with_tie = srocc({1, 1, 2}, {0.3, 0.9, 1.4});
    CHECK(with_tie == doctest::Approx(oracles::naive_spearman({1, 1, 2}, {0.3, 0.9, 1.4})).epsilon(1e-12));

    CHECK_THROWS_AS(srocc({2, 2, 2}, {1, 2, 3}), DataError);
}

TEST_CASE("plcc/srocc match the textbook oracle on 100 random sequences") {
    Rng rng(2);
    for (int it = 0; it < 100; ++it) {
        const size_t n = 3 + rng.below(40);
        std::vector<double> x(n), y(n);
        for (size_t i = 0; i < n; ++i) {
            // quantized values so ties actually occur
            x[i] = std::floor(rng.uniform(0, 8));
            y[i] = rng.uniform(0, 8);
        }
        bool x_const = true;
        for (double v : x) x_const = x_const && v == x[0];
        if (x_const) x[0] += 1.0;
        CHECK(std::abs(plcc(x, y) - oracles::naive_pearson(x, y)) < 1e-12);
        CHECK(std::abs(srocc(x, y) - oracles::naive_spearman(x, y)) < 1e-12);
    }
}

TEST_CASE("least squares fit recovers a line") {
    std::vector<double> x = {0, 1, 2, 3};
    std::vector<double> y = {1, 3, 5, 7};
    auto [slope, intercept] = least_squares_fit(x, y);
    CHECK(slope == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(intercept == doctest::Approx(1.0).epsilon(1e-12));
}

namespace {

ModelConfig flops_config() {
    ModelConfig c;
    c.image_size = 96;
    c.patch_short = 32;
    c.patch_long = 16;  // grids 3x3 and 6x6
    c.embed_dim = 16;
    c.window = 3;
    c.depth = 2;
    c.heads = 4;
    c.reduction = 4;
    c.head_hidden = 8;
    return c;
}

}  // namespace

TEST_CASE("hand-evaluated attention score MACs for one 36-token window") {
    // single window of 36 tokens, d=256, one head: QK^T alone costs 36^2*256
    ModelConfig c;
    c.image_size = 192;
    c.use_short_branch = false;
    c.use_cross = false;
    c.use_channel = false;
    c.patch_long = 32;  // 6x6 grid = one 6x6 window
    c.window = 6;
    c.depth = 1;
    c.heads = 1;
    auto b = flops_analytic(c);
    // scores field counts QK^T plus the weighting of V: twice the hand value
    CHECK(b.window_attention_scores == 2 * 36 * 36 * 256);
    CHECK(b.window_attention_scores / 2 == 331776);
}

TEST_CASE("measured MACs equal analytic MACs component by component") {
    std::vector<ModelConfig> configs;
    configs.push_back(flops_config());
    configs.push_back(reduced_config());
    {
        auto c = flops_config();
        c.use_short_branch = false;
        c.use_cross = false;
        configs.push_back(c);
    }
    {
        auto c = flops_config();
        c.use_spatial = false;
        configs.push_back(c);
    }
    {
        auto c = flops_config();
        c.use_channel = false;
        c.heads = 2;
        c.depth = 1;
        configs.push_back(c);
    }
    Rng rng(3);
    for (const auto& cfg : configs) {
        auto model = build_model(cfg);
        auto img = random_tensor({3, cfg.image_size, cfg.image_size}, rng, 0.0, 1.0);
        auto measured = flops_measured(model, img);
        auto analytic = flops_analytic(cfg);
        CHECK(measured.patch_embed == analytic.patch_embed);
        CHECK(measured.window_attention_projections == analytic.window_attention_projections);
        CHECK(measured.window_attention_scores == analytic.window_attention_scores);
        CHECK(measured.channel_attention == analytic.channel_attention);
        CHECK(measured.cross_attention == analytic.cross_attention);
        CHECK(measured.mlp == analytic.mlp);
        CHECK(measured.head == analytic.head);
        CHECK(measured.total == analytic.total);
        CHECK(measured.total == measured.patch_embed + measured.window_attention() +
                                    measured.channel_attention + measured.cross_attention +
                                    measured.mlp + measured.head);
    }
}

TEST_CASE("zero-depth model has no attention MACs") {
    auto c = flops_config();
    c.depth = 0;
    auto model = build_model(c);
    Rng rng(4);
    auto img = random_tensor({3, c.image_size, c.image_size}, rng, 0.0, 1.0);
    auto b = flops_measured(model, img);
    CHECK(b.window_attention() == 0);
    CHECK(b.channel_attention == 0);
    CHECK(b.mlp == 0);
    CHECK(b.patch_embed > 0);
}

TEST_CASE("windowed scores scale 4x under image-side doubling; global reference scales 16x") {
    // long branch only so the full grid is a single window size
    auto base = [](int64_t image, int64_t window) {
        ModelConfig c;
        c.image_size = image;
        c.use_short_branch = false;
        c.use_cross = false;
        c.patch_long = 16;
        c.window = window;
        c.depth = 2;
        return flops_analytic(c);
    };
    // fixed 6x6 window
    const auto w192 = base(192, 6);
    const auto w384 = base(384, 6);
    CHECK(w384.window_attention_scores == 4 * w192.window_attention_scores);

    // hypothetical global attention: window = full grid
    const auto g192 = base(192, 12);
    const auto g384 = base(384, 24);
    CHECK(g384.window_attention_scores == 16 * g192.window_attention_scores);
}

TEST_CASE("per-token accounting") {
    auto c = flops_config();
    auto b = flops_analytic(c);
    CHECK(b.per_token == doctest::Approx(static_cast<double>(b.total) /
                                         static_cast<double>(c.total_tokens())).epsilon(1e-15));
    const auto table = render_flops_table(b);
    CHECK(table.find("per token") != std::string::npos);
    const auto csv = render_flops_csv(b);
    CHECK(csv.find("window_attention,") != std::string::npos);
}
