#pragma once

#include <string>

#include "msscanet/model.hpp"
#include "msscanet/tensor.hpp"

namespace msscanet {

struct LossWeights {
    double alpha = 0.5;  // cross-branch consistency weight
    double beta = 0.5;   // adaptive-pooling consistency weight
    bool enable_cb = true;
    bool enable_ap = true;
};

// mean |pred - target|
TensorPtr l1_loss(const TensorPtr& pred, const TensorPtr& target);

// mean (a - b)^2 over all entries (mean, not sum, so loss magnitudes are
// grid-size invariant)
TensorPtr mse_loss(const TensorPtr& a, const TensorPtr& b);

// alpha * MSE between the two token grids after adaptively average-pooling
// both to the coarser grid (per axis). Symmetric once the grids match.
TensorPtr cb_loss(const TokenGrid& f_s, const TokenGrid& f_l, double alpha);

// beta * MSE(adaptive_avg_pool(f_orig -> f_pool's grid), f_pool). f_pool's
// grid must not exceed f_orig's on either axis.
TensorPtr ap_loss(const TokenGrid& f_orig, const TokenGrid& f_pool, double beta);

struct TotalLoss {
    TensorPtr total;  // l1 + cb + ap, disabled terms contributing exactly 0
    TensorPtr l1, cb, ap;
};

// Eq-style composite objective. The CB term compares the raw pre-fusion
// branch features; the AP term treats the long branch as the pre-pooling
// original and the short branch as the downsampled features. Either
// consistency term is 0 when disabled or when only one branch is present.
TotalLoss total_loss(const TensorPtr& pred, const TensorPtr& target, const BranchFeatures& feats,
                     const LossWeights& w);

// Table-row name for a loss configuration: "l1-only", "l1+cb", "l1+ap" or "full".
std::string loss_row_name(const LossWeights& w);

}  // namespace msscanet
