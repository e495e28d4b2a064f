#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msscanet/errors.hpp"
#include "msscanet/losses.hpp"
#include "msscanet/rng.hpp"
#include "oracles.hpp"

using namespace msscanet;
using oracles::random_tensor;

namespace {

TokenGrid grid_of(TensorPtr t, int64_t gh, int64_t gw) {
    return TokenGrid{std::move(t), gh, gw, 1};
}

}  // namespace

TEST_CASE("l1 loss basics") {
    auto a = tensor({2}, {1, 2});
    CHECK(l1_loss(a, tensor({2}, {1, 2}))->item() == 0.0);
    CHECK(l1_loss(a, tensor({2}, {2, 4}))->item() == doctest::Approx(1.5).epsilon(1e-15));
    CHECK_THROWS_AS(l1_loss(a, tensor({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("l1 loss gradient away from kinks") {
    auto pred = tensor({3}, {0.5, 1.2, -0.4});
    auto target = tensor({3}, {0.1, 0.6, 0.2});  // every |pred-target| >= 0.1
    auto err = grad_check(
        [&](const std::vector<TensorPtr>& in) { return l1_loss(in[0], target); }, {pred});
    CHECK(err <= 1e-4);
}

TEST_CASE("cb loss zero, constant offset and constant-pool invariance") {
    Rng rng(1);
    auto f = random_tensor({36, 8}, rng);
    CHECK(cb_loss(grid_of(f, 6, 6), grid_of(f, 6, 6), 0.5)->item() == 0.0);

    // same grids differing by constant 2: MSE = 4, alpha 0.5 -> 2
    auto g = tensor(f->shape, f->data);
    for (auto& v : g->data) v += 2.0;
    CHECK(cb_loss(grid_of(f, 6, 6), grid_of(g, 6, 6), 0.5)->item() == doctest::Approx(2.0).epsilon(1e-12));

    // pooling a constant grid yields that constant
    auto short_c = full({36, 4}, 1.0);
    auto long_c = full({144, 4}, 1.0);
    CHECK(cb_loss(grid_of(short_c, 6, 6), grid_of(long_c, 12, 12), 0.5)->item() == 0.0);
}

TEST_CASE("cb loss symmetry and scaling properties") {
    Rng rng(2);
    auto a = random_tensor({16, 4}, rng);
    auto b = random_tensor({16, 4}, rng);
    const double ab = cb_loss(grid_of(a, 4, 4), grid_of(b, 4, 4), 0.5)->item();
    const double ba = cb_loss(grid_of(b, 4, 4), grid_of(a, 4, 4), 0.5)->item();
    CHECK(ab == doctest::Approx(ba).epsilon(1e-15));

    // MSE homogeneity: scaling both inputs by t scales the loss by t^2
    auto a3 = scale(a, 3.0);
    auto b3 = scale(b, 3.0);
    const double scaled = cb_loss(grid_of(a3, 4, 4), grid_of(b3, 4, 4), 0.5)->item();
    CHECK(scaled == doctest::Approx(9.0 * ab).epsilon(1e-12));

    // doubling alpha doubles the loss
    const double twice = cb_loss(grid_of(a, 4, 4), grid_of(b, 4, 4), 1.0)->item();
    CHECK(twice == doctest::Approx(2.0 * ab).epsilon(1e-15));

    auto c = random_tensor({16, 8}, rng);
    CHECK_THROWS_AS(cb_loss(grid_of(a, 4, 4), grid_of(c, 4, 4), 0.5), ShapeError);
}

TEST_CASE("ap loss definitional zero, unit offset and compositional oracle") {
    Rng rng(3);
    auto orig = random_tensor({144, 4}, rng);
    auto og = grid_of(orig, 12, 12);

    // pooled original compared with itself
    auto pooled = adaptive_avg_pool(tokens_to_chw(orig, 12, 12), 6, 6);
    auto pg = grid_of(chw_to_tokens(pooled), 6, 6);
    CHECK(ap_loss(og, pg, 0.5)->item() == 0.0);

    // equal grids, unit offset: MSE = 1, beta 0.5
    auto shifted = tensor(orig->shape, orig->data);
    for (auto& v : shifted->data) v += 1.0;
    CHECK(ap_loss(og, grid_of(shifted, 12, 12), 0.5)->item() == doctest::Approx(0.5).epsilon(1e-12));

    // random 12x12 -> 6x6 against composing the primitives by hand
    auto small = random_tensor({36, 4}, rng);
    auto direct = ap_loss(og, grid_of(small, 6, 6), 0.7)->item();
    auto by_hand =
        scale(mean_all(square(sub(adaptive_avg_pool(tokens_to_chw(orig, 12, 12), 6, 6),
                                  tokens_to_chw(small, 6, 6)))),
              0.7)
            ->item();
    CHECK(std::abs(direct - by_hand) < 1e-12);

    // doubling beta doubles the loss
    CHECK(ap_loss(og, grid_of(small, 6, 6), 1.4)->item() == doctest::Approx(2.0 * direct).epsilon(1e-15));

    // pooled features larger than the original are rejected
    CHECK_THROWS_AS(ap_loss(grid_of(small, 6, 6), og, 0.5), ShapeError);
}

TEST_CASE("total loss decomposes into enabled terms") {
    Rng rng(4);
    auto pred = tensor({1}, {0.6});
    auto target = tensor({1}, {0.25});
    BranchFeatures feats;
    feats.f_short = grid_of(random_tensor({4, 4}, rng), 2, 2);
    feats.f_long = grid_of(random_tensor({16, 4}, rng), 4, 4);

    LossWeights off;
    off.enable_cb = off.enable_ap = false;
    auto base = total_loss(pred, target, feats, off);
    CHECK(base.total->item() == l1_loss(pred, target)->item());
    CHECK(base.cb->item() == 0.0);
    CHECK(base.ap->item() == 0.0);

    LossWeights both;
    auto full_loss = total_loss(pred, target, feats, both);
    const double indep = l1_loss(pred, target)->item() +
                         cb_loss(*feats.f_short, *feats.f_long, both.alpha)->item() +
                         ap_loss(*feats.f_long, *feats.f_short, both.beta)->item();
    CHECK(std::abs(full_loss.total->item() - indep) < 1e-15);

    // disabling one term changes the total by exactly that term
    LossWeights cb_only;
    cb_only.enable_ap = false;
    auto cb_total = total_loss(pred, target, feats, cb_only);
    CHECK(full_loss.total->item() - cb_total.total->item() == doctest::Approx(full_loss.ap->item()).epsilon(1e-15));
}

TEST_CASE("total loss with zero inputs is zero") {
    BranchFeatures feats;
    feats.f_short = grid_of(zeros({4, 4}), 2, 2);
    feats.f_long = grid_of(zeros({16, 4}), 4, 4);
    LossWeights w;
    auto r = total_loss(zeros({1}), zeros({1}), feats, w);
    CHECK(r.total->item() == 0.0);
}

TEST_CASE("total loss is differentiable end to end") {
    Rng rng(5);
    auto pred = tensor({1}, {0.8});
    auto fs = random_tensor({4, 4}, rng);
    auto fl = random_tensor({16, 4}, rng);
    auto target = tensor({1}, {0.3});
    LossWeights w;
    auto err = grad_check(
        [&](const std::vector<TensorPtr>& in) {
            BranchFeatures feats;
            feats.f_short = grid_of(in[1], 2, 2);
            feats.f_long = grid_of(in[2], 4, 4);
            return total_loss(in[0], target, feats, w).total;
        },
        {pred, fs, fl});
    CHECK(err <= 1e-4);
}

TEST_CASE("loss row names") {
    LossWeights w;
    CHECK(loss_row_name(w) == "full");
    w.enable_ap = false;
    CHECK(loss_row_name(w) == "l1+cb");
    w.enable_cb = false;
    CHECK(loss_row_name(w) == "l1-only");
    w.enable_ap = true;
    CHECK(loss_row_name(w) == "l1+ap");
}
