#pragma once

#include "msscanet/patch_embed.hpp"
#include "msscanet/tensor.hpp"

namespace msscanet {

// Projection weights for one attention stage. W_o is the post-concat output
// projection; it is null for cross-branch attention, which emits the
// softmax-weighted values directly.
struct AttentionParams {
    TensorPtr W_q, W_k, W_v, W_o;  // each [d,d]
    int64_t heads = 1;
};

// Squeeze-and-excitation weights: W1 [C/r, C], W2 [C, C/r].
struct ChannelAttnParams {
    TensorPtr W1, b1, W2, b2;
    int64_t reduction = 16;
};

struct LayerNormParams {
    TensorPtr gamma, beta;
};

struct MlpParams {
    TensorPtr W1, b1, W2, b2;  // d -> 4d -> d
};

// Per-block parameters; attn/ln1 are absent when spatial attention is off,
// chattn when channel attention is off.
struct BlockParams {
    LayerNormParams ln1;
    AttentionParams attn;
    ChannelAttnParams chattn;
    LayerNormParams ln2;
    MlpParams mlp;
};

// Copies of the softmax weight matrices produced during a call, for tests
// that audit row sums and mixing weights.
struct AttentionTrace {
    std::vector<Shape> shapes;
    std::vector<std::vector<double>> weights;
};

// Scaled dot-product attention within non-overlapping s x s windows, heads
// concatenated then projected by W_o. Output shape equals input shape. When
// score_macs is given, the QK^T and weighting matmuls are counted there
// instead of the ambient MAC sink.
TokenGrid window_self_attention(const TokenGrid& x, const AttentionParams& p, int64_t s,
                                AttentionTrace* trace = nullptr, int64_t* score_macs = nullptr);

// Squeeze (GAP + 1x1 conv), excite (ReLU, 1x1 conv, sigmoid), then scale the
// input channels by the excitation gate.
TensorPtr channel_attention(const TensorPtr& f, const ChannelAttnParams& p);

// Each branch's queries attend to the other branch's keys/values:
//   G_s = softmax(Q_s K_l^T / sqrt(d_k)) V_l,  G_l = softmax(Q_l K_s^T / sqrt(d_k)) V_s.
// No output projection (W_o unused).
std::pair<TokenGrid, TokenGrid> cross_branch_attention(const TokenGrid& f_s, const TokenGrid& f_l,
                                                       const AttentionParams& p_s,
                                                       const AttentionParams& p_l,
                                                       AttentionTrace* trace = nullptr);

struct BlockToggles {
    bool spatial = true;
    bool channel = true;
};

// Per-stage MAC sinks for a block; any pointer may be null.
struct BlockMacSinks {
    int64_t* attention_projections = nullptr;
    int64_t* attention_scores = nullptr;
    int64_t* channel = nullptr;
    int64_t* mlp = nullptr;
};

// Pre-norm residual block: spatial stage (X + WSA(LN(X))), channel stage
// (X + CA(X)), then token-wise MLP with pre-LN residual. Disabled stages are
// identity passthroughs.
TokenGrid transformer_block(const TokenGrid& x, const BlockParams& p, const BlockToggles& toggles,
                            int64_t window, const BlockMacSinks* sinks = nullptr);

}  // namespace msscanet
