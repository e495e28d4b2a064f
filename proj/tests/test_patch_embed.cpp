#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "msscanet/errors.hpp"
#include "msscanet/patch_embed.hpp"
#include "msscanet/rng.hpp"
#include "oracles.hpp"

using namespace msscanet;
using oracles::max_abs_diff;
using oracles::random_tensor;

namespace {
double sum_of(const TensorPtr& t) {
    return std::accumulate(t->data.begin(), t->data.end(), 0.0);
}
}  // namespace

TEST_CASE("patchify single-patch case flattens the whole image") {
    Rng rng(1);
    auto img = random_tensor({3, 4, 4}, rng);
    auto raw = patchify(img, 4);
    CHECK(raw->shape == Shape{1, 48});
    CHECK(max_abs_diff(raw->data, img->data) == 0.0);
}

TEST_CASE("patchify grid arithmetic for 192x192 with patch 16") {
    Rng rng(2);
    auto img = random_tensor({3, 192, 192}, rng);
    auto raw = patchify(img, 16);
    CHECK(raw->shape == Shape{144, 768});
}

TEST_CASE("patchify is an entry-preserving permutation") {
    Rng rng(3);
    auto img = random_tensor({3, 8, 8}, rng);
    auto raw = patchify(img, 4);
    CHECK(sum_of(raw) == doctest::Approx(sum_of(img)).epsilon(1e-12));

    auto a = img->data;
    auto b = raw->data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("patchify raster order spot check") {
    // 3x4x4 image, patch 2: patch 1 covers columns 2..3 of rows 0..1
    std::vector<double> data(48);
    std::iota(data.begin(), data.end(), 0.0);
    auto img = tensor({3, 4, 4}, std::move(data));
    auto raw = patchify(img, 2);
    CHECK(raw->shape == Shape{4, 12});
    // patch 1, channel 0 = pixels (0,2),(0,3),(1,2),(1,3) = 2,3,6,7
    CHECK(raw->data[12 * 1 + 0] == 2.0);
    CHECK(raw->data[12 * 1 + 1] == 3.0);
    CHECK(raw->data[12 * 1 + 2] == 6.0);
    CHECK(raw->data[12 * 1 + 3] == 7.0);
}

TEST_CASE("patchify rejects non-divisible extents") {
    Rng rng(4);
    auto img = random_tensor({3, 10, 10}, rng);
    CHECK_THROWS_WITH_AS(patchify(img, 4), doctest::Contains("divisible"), ShapeError);
}

TEST_CASE("embed_tokens projection-free, matmul oracle and linearity") {
    Rng rng(5);
    const int64_t n = 4, raw_dim = 12, d = 8;
    auto raw = random_tensor({n, raw_dim}, rng);
    auto pos = random_tensor({n, d}, rng);

    auto zero_w = zeros({raw_dim, d});
    auto tg = embed_tokens(raw, zero_w, pos, 2, 2, 2);
    CHECK(max_abs_diff(tg.tokens->data, pos->data) == 0.0);

    auto we = random_tensor({raw_dim, d}, rng);
    auto zero_pos = zeros({n, d});
    auto tg2 = embed_tokens(raw, we, zero_pos, 2, 2, 2);
    CHECK(max_abs_diff(tg2.tokens->data, oracles::naive_matmul(raw->data, we->data, n, raw_dim, d)) < 1e-12);

    // linearity in the raw patches when the positional code is fixed
    auto scaled_raw = scale(raw, 3.0);
    auto tg3 = embed_tokens(scaled_raw, we, zero_pos, 2, 2, 2);
    for (size_t i = 0; i < tg3.tokens->data.size(); ++i)
        CHECK(tg3.tokens->data[i] == doctest::Approx(3.0 * tg2.tokens->data[i]).epsilon(1e-12));
}

TEST_CASE("positional encoding zero-phase token and row sharing") {
    const int64_t d = 16;
    auto pe = positional_encoding(3, 4, d);
    CHECK(pe->shape == Shape{12, d});
    // token (0,0): all sin channels 0, all cos channels 1
    for (int64_t p = 0; p < d / 2; p += 2) {
        CHECK(pe->data[static_cast<size_t>(p)] == 0.0);
        CHECK(pe->data[static_cast<size_t>(p + 1)] == 1.0);
        CHECK(pe->data[static_cast<size_t>(d / 2 + p)] == 0.0);
        CHECK(pe->data[static_cast<size_t>(d / 2 + p + 1)] == 1.0);
    }
    // tokens (1,0) and (1,3) share the row half
    for (int64_t c = 0; c < d / 2; ++c)
        CHECK(pe->data[static_cast<size_t>(4 * d + c)] == pe->data[static_cast<size_t>((4 + 3) * d + c)]);
    // bounded by [-1,1]
    for (double v : pe->data) CHECK(std::abs(v) <= 1.0);

    CHECK_THROWS_AS(positional_encoding(2, 2, 6), ShapeError);
}

TEST_CASE("positional encoding rows are distinct") {
    for (auto [gh, gw, d] : {std::tuple<int64_t, int64_t, int64_t>{64, 64, 8},
                             {12, 12, 8}, {7, 5, 12}}) {
        auto pe = positional_encoding(gh, gw, d);
        const int64_t n = gh * gw;
        int64_t duplicate_pairs = 0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) {
                bool same = true;
                for (int64_t c = 0; c < d && same; ++c)
                    same = pe->data[static_cast<size_t>(i * d + c)] == pe->data[static_cast<size_t>(j * d + c)];
                if (same) ++duplicate_pairs;
            }
        CHECK(duplicate_pairs == 0);
    }
}

TEST_CASE("positional encoding is deterministic") {
    auto a = positional_encoding(6, 6, 32);
    auto b = positional_encoding(6, 6, 32);
    CHECK(a->data == b->data);
}

TEST_CASE("window partition shapes: single window and 12x12/s=6") {
    Rng rng(6);
    auto tg = TokenGrid{random_tensor({36, 8}, rng), 6, 6, 1};
    auto slabs = window_partition(tg, 6);
    CHECK(slabs->shape == Shape{1, 36, 8});
    CHECK(max_abs_diff(slabs->data, tg.tokens->data) == 0.0);

    auto tg2 = TokenGrid{random_tensor({144, 8}, rng), 12, 12, 1};
    auto slabs2 = window_partition(tg2, 6);
    CHECK(slabs2->shape == Shape{4, 36, 8});

    CHECK_THROWS_AS(window_partition(tg2, 5), ShapeError);
}

TEST_CASE("window partition/merge roundtrip is bit-exact") {
    Rng rng(7);
    for (auto [gh, gw, s] : {std::tuple<int64_t, int64_t, int64_t>{12, 12, 6}, {6, 6, 2}, {4, 8, 2}, {1, 1, 1}}) {
        auto tg = TokenGrid{random_tensor({gh * gw, 16}, rng), gh, gw, 1};
        auto slabs = window_partition(tg, s);
        auto back = window_merge(slabs, gh, gw, 1);
        CHECK(back.tokens->data == tg.tokens->data);

        // permutation conservation
        auto a = tg.tokens->data;
        auto b = slabs->data;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("window partition raster order on a 4x4 grid with s=2") {
    // token t has value t; hand enumeration of the 4 windows
    std::vector<double> vals(16);
    std::iota(vals.begin(), vals.end(), 0.0);
    auto tg = TokenGrid{tensor({16, 1}, std::move(vals)), 4, 4, 1};
    auto slabs = window_partition(tg, 2);
    CHECK(slabs->shape == Shape{4, 4, 1});
    const std::vector<double> expect = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
    CHECK(slabs->data == expect);
}

TEST_CASE("window_merge validates extents") {
    Rng rng(8);
    auto slabs = random_tensor({4, 4, 2}, rng);
    CHECK_THROWS_AS(window_merge(slabs, 5, 4, 1), ShapeError);
}

TEST_CASE("window partition and merge are differentiable") {
    Rng rng(9);
    auto x = random_tensor({16, 4}, rng);
    auto err = grad_check(
        [](const std::vector<TensorPtr>& in) {
            auto tg = TokenGrid{in[0], 4, 4, 1};
            auto slabs = window_partition(tg, 2);
            auto back = window_merge(slabs, 4, 4, 1);
            return mean_all(square(back.tokens));
        },
        {x});
    CHECK(err <= 1e-4);
}
