#include "msscanet/attention.hpp"

#include <cmath>
#include <optional>

#include "msscanet/errors.hpp"

namespace msscanet {

namespace {

void check_square(const TensorPtr& w, int64_t d, const char* name) {
    if (!w || w->rank() != 2 || w->shape[0] != d || w->shape[1] != d)
        throw ShapeError(std::string(name) + " must be [" + std::to_string(d) + "," +
                         std::to_string(d) + "]" + (w ? ", got " + shape_str(w->shape) : " (missing)"));
}

// Multi-head scaled dot-product between already-projected Q and K/V matrices.
TensorPtr heads_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int64_t heads,
                          AttentionTrace* trace, int64_t* score_macs = nullptr) {
    const int64_t d = q->shape[1];
    if (d % heads != 0) throw ShapeError("attention: embedding dim not divisible by head count");
    const int64_t dk = d / heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    std::vector<TensorPtr> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dk, dk);
        auto kh = slice_cols(k, h * dk, dk);
        auto vh = slice_cols(v, h * dk, dk);
        std::optional<MacScope> scope;
        if (score_macs) scope.emplace(score_macs);
        auto att = softmax(scale(matmul(qh, transpose2d(kh)), inv_sqrt_dk), 1);
        if (trace) {
            trace->shapes.push_back(att->shape);
            trace->weights.push_back(att->data);
        }
        outs.push_back(matmul(att, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

TokenGrid window_self_attention(const TokenGrid& x, const AttentionParams& p, int64_t s,
                                AttentionTrace* trace, int64_t* score_macs) {
    const auto& t = x.tokens;
    const int64_t d = t->shape[1];
    check_square(p.W_q, d, "W_q");
    check_square(p.W_k, d, "W_k");
    check_square(p.W_v, d, "W_v");
    check_square(p.W_o, d, "W_o");

    auto q = matmul(t, p.W_q);
    auto k = matmul(t, p.W_k);
    auto v = matmul(t, p.W_v);

    const auto order = window_order(x.grid_h, x.grid_w, s);
    const int64_t s2 = s * s;
    const int64_t m = static_cast<int64_t>(order.size()) / s2;

    auto qw = gather_rows(q, order);
    auto kw = gather_rows(k, order);
    auto vw = gather_rows(v, order);

    std::vector<TensorPtr> window_outs;
    window_outs.reserve(static_cast<size_t>(m));
    for (int64_t w = 0; w < m; ++w) {
        auto qm = slice_rows(qw, w * s2, s2);
        auto km = slice_rows(kw, w * s2, s2);
        auto vm = slice_rows(vw, w * s2, s2);
        window_outs.push_back(heads_attention(qm, km, vm, p.heads, trace, score_macs));
    }

    std::vector<int64_t> inverse(order.size());
    for (size_t i = 0; i < order.size(); ++i) inverse[static_cast<size_t>(order[i])] = static_cast<int64_t>(i);
    auto merged = gather_rows(m == 1 ? window_outs[0] : concat_rows(window_outs), inverse);
    return TokenGrid{matmul(merged, p.W_o), x.grid_h, x.grid_w, x.patch_size};
}

TensorPtr channel_attention(const TensorPtr& f, const ChannelAttnParams& p) {
    if (f->rank() != 3)
        throw ShapeError("channel_attention: input must be [C,H,W], got " + shape_str(f->shape));
    const int64_t c = f->shape[0];
    if (!p.W1 || p.W1->shape[1] != c || !p.W2 || p.W2->shape[0] != c)
        throw ShapeError("channel_attention: squeeze/excite weights do not match " +
                         std::to_string(c) + " channels");
    auto squeezed = pointwise_conv(global_avg_pool(f), p.W1, p.b1);
    auto gate = sigmoid(pointwise_conv(relu(squeezed), p.W2, p.b2));
    return channel_scale(f, gate);
}

std::pair<TokenGrid, TokenGrid> cross_branch_attention(const TokenGrid& f_s, const TokenGrid& f_l,
                                                       const AttentionParams& p_s,
                                                       const AttentionParams& p_l,
                                                       AttentionTrace* trace) {
    const int64_t d = f_s.tokens->shape[1];
    if (f_l.tokens->shape[1] != d)
        throw ShapeError("cross_branch_attention: embedding dims differ, " +
                         shape_str(f_s.tokens->shape) + " vs " + shape_str(f_l.tokens->shape));
    check_square(p_s.W_q, d, "W_q (short)");
    check_square(p_s.W_k, d, "W_k (short)");
    check_square(p_s.W_v, d, "W_v (short)");
    check_square(p_l.W_q, d, "W_q (long)");
    check_square(p_l.W_k, d, "W_k (long)");
    check_square(p_l.W_v, d, "W_v (long)");
    if (p_s.heads != p_l.heads) throw ShapeError("cross_branch_attention: head counts differ");

    auto qs = matmul(f_s.tokens, p_s.W_q);
    auto ks = matmul(f_s.tokens, p_s.W_k);
    auto vs = matmul(f_s.tokens, p_s.W_v);
    auto ql = matmul(f_l.tokens, p_l.W_q);
    auto kl = matmul(f_l.tokens, p_l.W_k);
    auto vl = matmul(f_l.tokens, p_l.W_v);

    auto g_s = heads_attention(qs, kl, vl, p_s.heads, trace);
    auto g_l = heads_attention(ql, ks, vs, p_l.heads, trace);
    return {TokenGrid{g_s, f_s.grid_h, f_s.grid_w, f_s.patch_size},
            TokenGrid{g_l, f_l.grid_h, f_l.grid_w, f_l.patch_size}};
}

TokenGrid transformer_block(const TokenGrid& x, const BlockParams& p, const BlockToggles& toggles,
                            int64_t window, const BlockMacSinks* sinks) {
    TokenGrid cur = x;
    if (toggles.spatial) {
        std::optional<MacScope> scope;
        if (sinks) scope.emplace(sinks->attention_projections);
        auto normed = TokenGrid{layer_norm(cur.tokens, p.ln1.gamma, p.ln1.beta), cur.grid_h,
                                cur.grid_w, cur.patch_size};
        auto attended =
            window_self_attention(normed, p.attn, window, nullptr, sinks ? sinks->attention_scores : nullptr);
        cur.tokens = add(cur.tokens, attended.tokens);
    }
    if (toggles.channel) {
        std::optional<MacScope> scope;
        if (sinks) scope.emplace(sinks->channel);
        auto chw = tokens_to_chw(cur.tokens, cur.grid_h, cur.grid_w);
        auto gated = channel_attention(chw, p.chattn);
        cur.tokens = add(cur.tokens, chw_to_tokens(gated));
    }
    std::optional<MacScope> scope;
    if (sinks) scope.emplace(sinks->mlp);
    auto normed = layer_norm(cur.tokens, p.ln2.gamma, p.ln2.beta);
    auto hidden = relu(add_row_bias(matmul(normed, p.mlp.W1), p.mlp.b1));
    auto mlp_out = add_row_bias(matmul(hidden, p.mlp.W2), p.mlp.b2);
    cur.tokens = add(cur.tokens, mlp_out);
    return cur;
}

}  // namespace msscanet
