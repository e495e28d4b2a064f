#include "msscanet/patch_embed.hpp"

#include <cmath>

#include "msscanet/errors.hpp"

namespace msscanet {

TensorPtr patchify(const TensorPtr& image, int64_t patch) {
    if (image->rank() != 3 || image->shape[0] != 3)
        throw ShapeError("patchify: image must be [3,H,W], got " + shape_str(image->shape));
    const int64_t h = image->shape[1], w = image->shape[2];
    if (patch <= 0 || h % patch != 0 || w % patch != 0)
        throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by patch size " + std::to_string(patch) +
                         "; use an image size divisible by every configured patch size");

    const int64_t gh = h / patch, gw = w / patch;
    const int64_t n = gh * gw, row = 3 * patch * patch;
    auto perm = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * row));
    for (int64_t pi = 0; pi < gh; ++pi)
        for (int64_t pj = 0; pj < gw; ++pj) {
            const int64_t k = pi * gw + pj;
            int64_t o = k * row;
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < patch; ++y)
                    for (int64_t x = 0; x < patch; ++x)
                        (*perm)[static_cast<size_t>(o++)] =
                            (c * h + pi * patch + y) * w + pj * patch + x;
        }
    return gather_flat(image, perm, {n, row});
}

TokenGrid embed_tokens(const TensorPtr& raw, const TensorPtr& W_e, const TensorPtr& pos,
                       int64_t grid_h, int64_t grid_w, int64_t patch) {
    auto tokens = add(matmul(raw, W_e), pos);
    if (tokens->shape[0] != grid_h * grid_w)
        throw ShapeError("embed_tokens: token count " + std::to_string(tokens->shape[0]) +
                         " does not match grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
    return TokenGrid{tokens, grid_h, grid_w, patch};
}

TensorPtr positional_encoding(int64_t grid_h, int64_t grid_w, int64_t d) {
    if (d % 4 != 0)
        throw ShapeError("positional_encoding: embedding dim " + std::to_string(d) +
                         " must be divisible by 4");
    const int64_t n = grid_h * grid_w;
    const int64_t half = d / 2;      // channels per axis
    const int64_t pairs = half / 2;  // sin/cos pairs per axis
    std::vector<double> enc(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < grid_h; ++i) {
        for (int64_t j = 0; j < grid_w; ++j) {
            double* row = enc.data() + (i * grid_w + j) * d;
            for (int64_t p = 0; p < pairs; ++p) {
                const double freq = std::pow(10000.0, -2.0 * static_cast<double>(p) / static_cast<double>(half));
                row[2 * p] = std::sin(static_cast<double>(i) * freq);
                row[2 * p + 1] = std::cos(static_cast<double>(i) * freq);
                row[half + 2 * p] = std::sin(static_cast<double>(j) * freq);
                row[half + 2 * p + 1] = std::cos(static_cast<double>(j) * freq);
            }
        }
    }
    return tensor({n, d}, std::move(enc));
}

std::vector<int64_t> window_order(int64_t grid_h, int64_t grid_w, int64_t s) {
    if (s <= 0 || grid_h % s != 0 || grid_w % s != 0)
        throw ShapeError("window size " + std::to_string(s) + " does not divide grid " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w));
    std::vector<int64_t> order;
    order.reserve(static_cast<size_t>(grid_h * grid_w));
    for (int64_t wi = 0; wi < grid_h / s; ++wi)
        for (int64_t wj = 0; wj < grid_w / s; ++wj)
            for (int64_t y = 0; y < s; ++y)
                for (int64_t x = 0; x < s; ++x)
                    order.push_back((wi * s + y) * grid_w + wj * s + x);
    return order;
}

TensorPtr window_partition(const TokenGrid& grid, int64_t s) {
    const auto& t = grid.tokens;
    if (t->rank() != 2 || t->shape[0] != grid.grid_h * grid.grid_w)
        throw ShapeError("window_partition: bad token grid " + shape_str(t->shape));
    const int64_t d = t->shape[1];
    const auto order = window_order(grid.grid_h, grid.grid_w, s);
    const int64_t m = (grid.grid_h / s) * (grid.grid_w / s);
    auto parted = gather_rows(t, order);
    return reshape(parted, {m, s * s, d});
}

TokenGrid window_merge(const TensorPtr& slabs, int64_t grid_h, int64_t grid_w, int64_t patch) {
    if (slabs->rank() != 3)
        throw ShapeError("window_merge: expects [M,s^2,d], got " + shape_str(slabs->shape));
    const int64_t m = slabs->shape[0], s2 = slabs->shape[1], d = slabs->shape[2];
    if (m * s2 != grid_h * grid_w)
        throw ShapeError("window_merge: " + std::to_string(m) + " windows of " + std::to_string(s2) +
                         " tokens do not cover a " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w) + " grid");
    const auto s = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(s2))));
    if (s * s != s2) throw ShapeError("window_merge: slab token count is not a square");

    const auto order = window_order(grid_h, grid_w, s);
    std::vector<int64_t> inverse(order.size());
    for (size_t i = 0; i < order.size(); ++i) inverse[static_cast<size_t>(order[i])] = static_cast<int64_t>(i);
    auto tokens = gather_rows(reshape(slabs, {m * s2, d}), inverse);
    return TokenGrid{tokens, grid_h, grid_w, patch};
}

}  // namespace msscanet
