#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msscanet/attention.hpp"
#include "msscanet/errors.hpp"
#include "msscanet/model.hpp"
#include "msscanet/rng.hpp"
#include "oracles.hpp"

using namespace msscanet;
using oracles::random_tensor;

namespace {

// Small end-to-end configuration used throughout this suite.
ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 16;
    c.patch_short = 16;
    c.patch_long = 8;
    c.embed_dim = 8;
    c.window = 1;
    c.depth = 1;
    c.heads = 2;
    c.reduction = 4;
    c.head_hidden = 8;
    return c;
}

double param_checksum(const Model& m) {
    double s = 0.0;
    size_t k = 1;
    for (const auto& [name, t] : m.parameters)
        for (double v : t->data) s += v * static_cast<double>(k++ % 97);
    return s;
}

}  // namespace

TEST_CASE("build_model is deterministic for a fixed seed") {
    auto cfg = tiny_config();
    cfg.seed = 1234;
    auto a = build_model(cfg);
    auto b = build_model(cfg);
    CHECK(param_checksum(a) == param_checksum(b));
    REQUIRE(a.parameters.size() == b.parameters.size());
    for (size_t i = 0; i < a.parameters.size(); ++i) {
        CHECK(a.parameters[i].first == b.parameters[i].first);
        CHECK(a.parameters[i].second->data == b.parameters[i].second->data);
    }

    cfg.seed = 1235;
    auto c = build_model(cfg);
    CHECK(param_checksum(a) != param_checksum(c));
}

TEST_CASE("parameter count matches the closed-form formula") {
    std::vector<ModelConfig> configs;
    configs.push_back(tiny_config());
    configs.push_back(reduced_config());
    {
        auto c = tiny_config();
        c.use_short_branch = false;
        c.use_cross = false;
        configs.push_back(c);
    }
    {
        auto c = tiny_config();
        c.use_spatial = false;
        configs.push_back(c);
    }
    {
        auto c = tiny_config();
        c.use_channel = false;
        c.depth = 2;
        configs.push_back(c);
    }
    {
        ModelConfig c;  // paper-scale default
        configs.push_back(c);
    }
    for (const auto& cfg : configs) {
        auto m = build_model(cfg);
        int64_t total = 0;
        for (const auto& [name, t] : m.parameters) total += t->size();
        CHECK(total == expected_parameter_count(cfg));
    }
}

TEST_CASE("parameter names are unique") {
    auto m = build_model(tiny_config());
    std::set<std::string> names;
    for (const auto& [name, t] : m.parameters) CHECK(names.insert(name).second);
    CHECK(m.find_parameter("branch.long.block0.attn.W_q") != nullptr);
    CHECK(m.find_parameter("cross.short.W_q") != nullptr);
    CHECK(m.find_parameter("no.such.param") == nullptr);
}

TEST_CASE("cross attention without both branches is a configuration error") {
    auto cfg = tiny_config();
    cfg.use_long_branch = false;
    cfg.use_cross = true;
    CHECK_THROWS_WITH_AS(build_model(cfg), doctest::Contains("cross"), UsageError);
}

TEST_CASE("invalid configurations are rejected with descriptive errors") {
    auto divis = tiny_config();
    divis.image_size = 20;  // not divisible by patch_short 16
    CHECK_THROWS_AS(build_model(divis), UsageError);

    auto heads = tiny_config();
    heads.heads = 3;
    CHECK_THROWS_AS(build_model(heads), UsageError);

    auto window = tiny_config();
    window.window = 3;  // long grid 2 not divisible
    CHECK_THROWS_AS(build_model(window), UsageError);

    auto nobranch = tiny_config();
    nobranch.use_short_branch = false;
    nobranch.use_long_branch = false;
    CHECK_THROWS_AS(build_model(nobranch), UsageError);
}

TEST_CASE("forward returns a finite scalar across 100 random images") {
    auto cfg = tiny_config();
    cfg.seed = 9;
    auto m = build_model(cfg);
    Rng rng(100);
    for (int i = 0; i < 100; ++i) {
        auto img = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
        auto r = forward(m, img);
        CHECK(r.mos->size() == 1);
        CHECK(std::isfinite(r.mos->item()));
    }
}

TEST_CASE("forward is deterministic") {
    auto m = build_model(tiny_config());
    Rng rng(4);
    auto img = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    auto a = forward(m, img);
    auto b = forward(m, img);
    CHECK(a.mos->item() == b.mos->item());
}

TEST_CASE("forward rejects mismatched image sizes") {
    auto m = build_model(tiny_config());
    Rng rng(5);
    auto img = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    CHECK_THROWS_AS(forward(m, img), ShapeError);
}

TEST_CASE("single-branch ablation runs end-to-end") {
    auto cfg = tiny_config();
    cfg.use_short_branch = false;
    cfg.use_cross = false;  // long branch only, both attentions
    CHECK(validate_ablation(cfg) == "single-both");
    auto m = build_model(cfg);
    Rng rng(6);
    auto img = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    auto r = forward(m, img);
    CHECK(std::isfinite(r.mos->item()));
    CHECK(!r.feats.f_short.has_value());
    CHECK(r.feats.f_long.has_value());
}

TEST_CASE("constant head forces the output") {
    auto cfg = tiny_config();
    auto m = build_model(cfg);
    for (auto name : {"head.W1", "head.b1", "head.W2"}) {
        auto t = m.find_parameter(name);
        REQUIRE(t != nullptr);
        std::fill(t->data.begin(), t->data.end(), 0.0);
    }
    m.find_parameter("head.b2")->data[0] = 3.7;
    Rng rng(7);
    for (int i = 0; i < 3; ++i) {
        auto img = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
        CHECK(forward(m, img).mos->item() == 3.7);
    }
}

TEST_CASE("validate_ablation maps toggle combinations to table rows") {
    ModelConfig c = tiny_config();  // both branches, both attentions, cross
    CHECK(validate_ablation(c) == "multi-dual");

    c.use_short_branch = false;
    c.use_cross = false;
    c.use_channel = false;
    CHECK(validate_ablation(c) == "single-spatial");

    c.use_channel = true;
    c.use_spatial = false;
    CHECK(validate_ablation(c) == "single-channel");

    auto both = tiny_config();
    both.use_channel = false;
    both.use_cross = false;
    CHECK(validate_ablation(both) == "custom");
}

TEST_CASE("gradient flows to every parameter; absent components have none") {
    // every stage must be non-degenerate: windows larger than one token so
    // the softmax depends on W_q/W_k, and both branches holding several
    // tokens so each cross-attention softmax has real competition
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_short = 16;  // 2x2 grid
    cfg.patch_long = 8;    // 4x4 grid
    cfg.embed_dim = 8;
    cfg.window = 2;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.reduction = 2;
    cfg.head_hidden = 8;
    cfg.seed = 42;
    auto m = build_model(cfg);
    Rng rng(8);

    for (auto& [name, p] : m.parameters) p->zero_grad();
    // two-image batch so the mean over tokens cannot hide a direction
    TensorPtr loss;
    for (int i = 0; i < 2; ++i) {
        auto img = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
        auto r = forward(m, img);
        auto term = square(sub(r.mos, scalar(0.3 + 0.4 * i)));
        loss = loss ? add(loss, term) : term;
    }
    backward(loss);

    for (const auto& [name, p] : m.parameters) {
        double norm = 0.0;
        for (double g : p->grad) norm += g * g;
        CAPTURE(name);
        CHECK(norm > 0.0);
    }

    // disabled components do not exist in the parameter set
    auto cfg2 = tiny_config();
    cfg2.use_spatial = false;
    cfg2.use_cross = false;
    cfg2.use_channel = false;
    auto m2 = build_model(cfg2);
    for (const auto& [name, p] : m2.parameters) {
        CHECK(name.find(".attn.") == std::string::npos);
        CHECK(name.find(".chattn.") == std::string::npos);
        CHECK(name.find("cross.") == std::string::npos);
    }
}

TEST_CASE("full-model grad_check on a tiny config") {
    auto cfg = tiny_config();
    cfg.seed = 3;
    Rng rng(17);

    // pick a probe point a safe distance from every relu kink
    Model m = build_model(cfg);
    TensorPtr img;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng irng(seed);
        img = random_tensor({3, 16, 16}, irng, 0.0, 1.0);
        KinkWatch watch;
        auto* prev = set_kink_watch(&watch);
        forward(m, img);
        set_kink_watch(prev);
        if (watch.min_margin > 5e-3) break;
    }

    std::vector<TensorPtr> params;
    for (auto& [name, p] : m.parameters) params.push_back(p);
    auto err = grad_check(
        [&](const std::vector<TensorPtr>&) {
            auto r = forward(m, img);
            return square(sub(r.mos, scalar(0.37)));
        },
        params);
    CHECK(err <= 1e-4);
}

TEST_CASE("window locality holds through a spatial-only model") {
    auto cfg = tiny_config();
    cfg.image_size = 32;
    cfg.patch_short = 16;
    cfg.patch_long = 8;  // long grid 4x4
    cfg.window = 2;
    cfg.use_short_branch = false;
    cfg.use_cross = false;
    cfg.use_channel = false;
    auto m = build_model(cfg);

    Rng rng(9);
    auto img = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    auto base = forward(m, img);

    // perturb one pixel inside patch (0,3) of the long branch: token 3 sits in
    // the top-right window; the top-left window holds tokens 0,1,4,5
    auto img2 = tensor(img->shape, img->data);
    img2->data[static_cast<size_t>(0 * 32 * 32 + 2 * 32 + 3 * 8 + 1)] += 0.5;
    auto pert = forward(m, img2);

    const int64_t d = cfg.embed_dim;
    const auto& a = base.feats.f_long->tokens->data;
    const auto& b = pert.feats.f_long->tokens->data;
    for (int64_t tok : {0, 1, 4, 5})
        for (int64_t c = 0; c < d; ++c)
            CHECK(a[static_cast<size_t>(tok * d + c)] == b[static_cast<size_t>(tok * d + c)]);
    double diff = 0.0;
    for (int64_t c = 0; c < d; ++c) diff += std::abs(a[static_cast<size_t>(3 * d + c)] - b[static_cast<size_t>(3 * d + c)]);
    CHECK(diff > 0.0);
}

TEST_CASE("channel contraction holds with the assembled model's parameters") {
    auto cfg = tiny_config();
    cfg.seed = 11;
    auto m = build_model(cfg);
    const auto& blk = m.long_branch.blocks.at(0);
    Rng rng(10);
    auto f = random_tensor({cfg.embed_dim, 2, 2}, rng, -2.0, 2.0);
    auto out = channel_attention(f, blk.chattn);
    for (size_t i = 0; i < f->data.size(); ++i)
        if (f->data[i] != 0.0) CHECK(std::abs(out->data[i]) < std::abs(f->data[i]));
}
