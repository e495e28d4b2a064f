#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msscanet/attention.hpp"
#include "msscanet/patch_embed.hpp"
#include "msscanet/tensor.hpp"

namespace msscanet {

// All architectural hyperparameters. The short branch uses the larger
// patches (fewer tokens), the long branch the smaller ones.
struct ModelConfig {
    int64_t image_size = 192;
    int64_t patch_short = 32;
    int64_t patch_long = 16;
    int64_t embed_dim = 256;
    int64_t window = 6;
    int64_t depth = 2;
    int64_t heads = 4;
    int64_t reduction = 16;
    int64_t head_hidden = 128;
    bool use_short_branch = true;
    bool use_long_branch = true;
    bool use_spatial = true;
    bool use_channel = true;
    bool use_cross = true;
    uint64_t seed = 0;

    int64_t grid_short() const { return image_size / patch_short; }
    int64_t grid_long() const { return image_size / patch_long; }
    int64_t tokens_short() const { return grid_short() * grid_short(); }
    int64_t tokens_long() const { return grid_long() * grid_long(); }
    int64_t branch_count() const {
        return (use_short_branch ? 1 : 0) + (use_long_branch ? 1 : 0);
    }
    // Total token count across enabled branches.
    int64_t total_tokens() const {
        return (use_short_branch ? tokens_short() : 0) + (use_long_branch ? tokens_long() : 0);
    }
};

// Throws UsageError describing the first violated invariant.
void validate_config(const ModelConfig& config);

// The reduced verification configuration: image 64, d 32, depth 1, both
// branches, cross attention on.
ModelConfig reduced_config();

struct BranchParams {
    TensorPtr W_e;   // [3p^2, d]
    TensorPtr pos;   // [N, d], fixed (not a parameter)
    std::vector<BlockParams> blocks;
};

struct HeadParams {
    TensorPtr W1, b1, W2, b2;  // concat -> hidden -> 1
};

struct Model {
    ModelConfig config;
    BranchParams short_branch;
    BranchParams long_branch;
    AttentionParams cross_short;  // W_o null: Eq-style cross attention has no output projection
    AttentionParams cross_long;
    HeadParams head;
    // Registration order is the deterministic initialization order.
    std::vector<std::pair<std::string, TensorPtr>> parameters;

    TensorPtr find_parameter(const std::string& name) const;
};

// Builds a model with parameters drawn uniformly from +/- 1/sqrt(fan_in)
// (biases zero, layer-norm gains one) using the config seed. Identical
// seed+config yields bit-identical parameters.
Model build_model(const ModelConfig& config);

// Closed-form parameter count for a config; audited against enumeration in
// the tests:
//   sum over enabled branches of 3p^2 d
//   + depth * [spatial(2d + 4d^2) + channel(2d^2/r + d/r + d) + (2d + 8d^2 + 5d)] per branch
//   + cross * 3d^2 per branch
//   + (n_branches d) h + h + h + 1  for the head.
int64_t expected_parameter_count(const ModelConfig& config);

// Pre-fusion branch features (and their cross-attended forms when cross
// attention is enabled), as consumed by the consistency losses.
struct BranchFeatures {
    std::optional<TokenGrid> f_short;
    std::optional<TokenGrid> f_long;
    std::optional<TokenGrid> g_short;
    std::optional<TokenGrid> g_long;
};

struct FlopsBreakdown;  // metrics/flops module

struct ForwardResult {
    TensorPtr mos;  // scalar [1]
    BranchFeatures feats;
};

// Runs the enabled pipeline: per-branch patchify/embed, depth blocks,
// cross-branch attention with residual, mean-pool fusion, MOS head. When
// `macs` is given, per-component multiply-accumulate counts are recorded.
ForwardResult forward(const Model& model, const TensorPtr& image, FlopsBreakdown* macs = nullptr);

// Canonical ablation row implied by the architecture toggles:
// single-both / single-spatial / single-channel / multi-dual / custom.
std::string validate_ablation(const ModelConfig& config);

}  // namespace msscanet
