#pragma once

#include <string>

#include "msscanet/model.hpp"

namespace msscanet {

// Multiply-accumulate counts per component for one forward pass. Counted
// MACs are the linear-algebra primitives only: matmul, 1x1 convolution and
// the channel-gating multiply. Softmax, activations, layer norm, additions
// and pooling are excluded; the scaling laws the counts support do not
// depend on that convention.
struct FlopsBreakdown {
    int64_t patch_embed = 0;
    int64_t window_attention_projections = 0;
    int64_t window_attention_scores = 0;  // QK^T and the weighting of V
    int64_t channel_attention = 0;
    int64_t cross_attention = 0;
    int64_t mlp = 0;
    int64_t head = 0;
    int64_t total = 0;
    double per_token = 0.0;

    int64_t window_attention() const {
        return window_attention_projections + window_attention_scores;
    }
    void finalize(int64_t total_tokens);
};

// Closed-form counts for a config. Per branch with N tokens and window side s:
//   patch embed                N * 3p^2 * d
//   attention projections      depth * 4 N d^2
//   attention scores           depth * 2 N s^2 d     (per window: 2 N_w^2 d, N_w = s^2)
//   channel attention          depth * (2 d^2/r + d N)
//   MLP                        depth * 8 N d^2
// plus, once: cross attention 3(N_s+N_l) d^2 + 4 N_s N_l d, and the head
// (n_branches d) h + h.
FlopsBreakdown flops_analytic(const ModelConfig& config);

// Runs a forward pass with the MAC instrumentation installed and returns the
// observed counts; matches flops_analytic exactly for every component.
FlopsBreakdown flops_measured(const Model& model, const TensorPtr& image);

std::string render_flops_table(const FlopsBreakdown& b);
std::string render_flops_csv(const FlopsBreakdown& b);

}  // namespace msscanet
