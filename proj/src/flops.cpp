#include "msscanet/flops.hpp"

#include <cstdio>

namespace msscanet {

void FlopsBreakdown::finalize(int64_t total_tokens) {
    total = patch_embed + window_attention_projections + window_attention_scores +
            channel_attention + cross_attention + mlp + head;
    per_token = total_tokens > 0 ? static_cast<double>(total) / static_cast<double>(total_tokens) : 0.0;
}

FlopsBreakdown flops_analytic(const ModelConfig& c) {
    validate_config(c);
    FlopsBreakdown b;
    const int64_t d = c.embed_dim;

    auto branch = [&](int64_t patch, int64_t n) {
        b.patch_embed += n * 3 * patch * patch * d;
        if (c.use_spatial) {
            b.window_attention_projections += c.depth * 4 * n * d * d;
            // per window: N_w^2 d for QK^T plus N_w^2 d for weighting V,
            // N_w = s^2 tokens; M = n / s^2 windows
            b.window_attention_scores += c.depth * 2 * n * c.window * c.window * d;
        }
        if (c.use_channel) b.channel_attention += c.depth * (2 * d * d / c.reduction + d * n);
        b.mlp += c.depth * 8 * n * d * d;
    };
    if (c.use_short_branch) branch(c.patch_short, c.tokens_short());
    if (c.use_long_branch) branch(c.patch_long, c.tokens_long());

    if (c.use_cross) {
        const int64_t ns = c.tokens_short(), nl = c.tokens_long();
        b.cross_attention = 3 * (ns + nl) * d * d + 4 * ns * nl * d;
    }

    const int64_t fused = d * c.branch_count();
    b.head = fused * c.head_hidden + c.head_hidden;

    b.finalize(c.total_tokens());
    return b;
}

FlopsBreakdown flops_measured(const Model& model, const TensorPtr& image) {
    FlopsBreakdown b;
    forward(model, image, &b);
    return b;
}

std::string render_flops_table(const FlopsBreakdown& b) {
    char buf[512];
    std::string out;
    auto row = [&](const char* name, int64_t v) {
        std::snprintf(buf, sizeof(buf), "  %-24s %14lld\n", name, static_cast<long long>(v));
        out += buf;
    };
    out += "component                            MACs\n";
    row("patch embed", b.patch_embed);
    row("window attention", b.window_attention());
    row("  (scores)", b.window_attention_scores);
    row("channel attention", b.channel_attention);
    row("cross attention", b.cross_attention);
    row("mlp", b.mlp);
    row("head", b.head);
    row("total", b.total);
    std::snprintf(buf, sizeof(buf), "  %-24s %14.1f\n", "per token", b.per_token);
    out += buf;
    return out;
}

std::string render_flops_csv(const FlopsBreakdown& b) {
    char buf[512];
    std::string out = "component,macs\n";
    auto row = [&](const char* name, int64_t v) {
        std::snprintf(buf, sizeof(buf), "%s,%lld\n", name, static_cast<long long>(v));
        out += buf;
    };
    row("patch_embed", b.patch_embed);
    row("window_attention", b.window_attention());
    row("window_attention_scores", b.window_attention_scores);
    row("channel_attention", b.channel_attention);
    row("cross_attention", b.cross_attention);
    row("mlp", b.mlp);
    row("head", b.head);
    row("total", b.total);
    std::snprintf(buf, sizeof(buf), "per_token,%.6f\n", b.per_token);
    out += buf;
    return out;
}

}  // namespace msscanet
