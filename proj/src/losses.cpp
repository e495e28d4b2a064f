#include "msscanet/losses.hpp"

#include <algorithm>

#include "msscanet/errors.hpp"

namespace msscanet {

TensorPtr l1_loss(const TensorPtr& pred, const TensorPtr& target) {
    if (pred->shape != target->shape)
        throw ShapeError("l1_loss: shape mismatch " + shape_str(pred->shape) + " vs " +
                         shape_str(target->shape));
    return mean_all(abs_val(sub(pred, target)));
}

TensorPtr mse_loss(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw ShapeError("mse_loss: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    return mean_all(square(sub(a, b)));
}

TensorPtr cb_loss(const TokenGrid& f_s, const TokenGrid& f_l, double alpha) {
    if (f_s.tokens->shape[1] != f_l.tokens->shape[1])
        throw ShapeError("cb_loss: embedding dims differ, " + shape_str(f_s.tokens->shape) + " vs " +
                         shape_str(f_l.tokens->shape));
    const int64_t gh = std::min(f_s.grid_h, f_l.grid_h);
    const int64_t gw = std::min(f_s.grid_w, f_l.grid_w);
    auto a = adaptive_avg_pool(tokens_to_chw(f_s.tokens, f_s.grid_h, f_s.grid_w), gh, gw);
    auto b = adaptive_avg_pool(tokens_to_chw(f_l.tokens, f_l.grid_h, f_l.grid_w), gh, gw);
    return scale(mse_loss(a, b), alpha);
}

TensorPtr ap_loss(const TokenGrid& f_orig, const TokenGrid& f_pool, double beta) {
    if (f_orig.tokens->shape[1] != f_pool.tokens->shape[1])
        throw ShapeError("ap_loss: embedding dims differ, " + shape_str(f_orig.tokens->shape) + " vs " +
                         shape_str(f_pool.tokens->shape));
    if (f_pool.grid_h > f_orig.grid_h || f_pool.grid_w > f_orig.grid_w)
        throw ShapeError("ap_loss: pooled grid " + std::to_string(f_pool.grid_h) + "x" +
                         std::to_string(f_pool.grid_w) + " exceeds original " +
                         std::to_string(f_orig.grid_h) + "x" + std::to_string(f_orig.grid_w));
    auto pooled_orig = adaptive_avg_pool(tokens_to_chw(f_orig.tokens, f_orig.grid_h, f_orig.grid_w),
                                         f_pool.grid_h, f_pool.grid_w);
    auto pooled = tokens_to_chw(f_pool.tokens, f_pool.grid_h, f_pool.grid_w);
    return scale(mse_loss(pooled_orig, pooled), beta);
}

TotalLoss total_loss(const TensorPtr& pred, const TensorPtr& target, const BranchFeatures& feats,
                     const LossWeights& w) {
    if (w.alpha < 0.0 || w.beta < 0.0) throw UsageError("loss weights must be non-negative");
    TotalLoss out;
    out.l1 = l1_loss(pred, target);
    const bool both = feats.f_short.has_value() && feats.f_long.has_value();
    out.cb = (w.enable_cb && both) ? cb_loss(*feats.f_short, *feats.f_long, w.alpha) : scalar(0.0);
    out.ap = (w.enable_ap && both) ? ap_loss(*feats.f_long, *feats.f_short, w.beta) : scalar(0.0);
    out.total = add(add(out.l1, out.cb), out.ap);
    return out;
}

std::string loss_row_name(const LossWeights& w) {
    if (w.enable_cb && w.enable_ap) return "full";
    if (w.enable_cb) return "l1+cb";
    if (w.enable_ap) return "l1+ap";
    return "l1-only";
}

}  // namespace msscanet
