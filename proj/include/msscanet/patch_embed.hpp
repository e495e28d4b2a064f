#pragma once

#include "msscanet/tensor.hpp"

namespace msscanet {

// A branch's token matrix together with its 2D arrangement.
struct TokenGrid {
    TensorPtr tokens;  // [N, d], N == grid_h * grid_w
    int64_t grid_h = 0;
    int64_t grid_w = 0;
    int64_t patch_size = 0;
};

// Splits [3,H,W] into non-overlapping p x p patches in raster order; row k of
// the result is patch k flattened row-major ([c][y][x]). Requires H and W
// divisible by p.
TensorPtr patchify(const TensorPtr& image, int64_t patch);

// tokens = raw * W_e + pos
TokenGrid embed_tokens(const TensorPtr& raw, const TensorPtr& W_e, const TensorPtr& pos,
                       int64_t grid_h, int64_t grid_w, int64_t patch);

// Fixed 2D sinusoidal code: the first d/2 channels encode the row index, the
// last d/2 the column index, each as interleaved sin/cos at geometric
// frequencies (base 10000). d must be divisible by 4.
TensorPtr positional_encoding(int64_t grid_h, int64_t grid_w, int64_t d);

// Row order that lists tokens window by window (s x s tiles in raster order,
// tokens within a window in raster order).
std::vector<int64_t> window_order(int64_t grid_h, int64_t grid_w, int64_t s);

// [M, s^2, d] slabs, one per window. Exact inverse pair with window_merge.
TensorPtr window_partition(const TokenGrid& grid, int64_t s);
TokenGrid window_merge(const TensorPtr& slabs, int64_t grid_h, int64_t grid_w, int64_t patch);

}  // namespace msscanet
