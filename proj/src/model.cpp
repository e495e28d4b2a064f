#include "msscanet/model.hpp"

#include <cmath>
#include <optional>

#include "msscanet/errors.hpp"
#include "msscanet/flops.hpp"
#include "msscanet/rng.hpp"

namespace msscanet {

void validate_config(const ModelConfig& c) {
    auto fail = [](const std::string& msg) { throw UsageError("invalid config: " + msg); };
    if (c.image_size <= 0) fail("image_size must be positive");
    if (c.branch_count() == 0) fail("at least one branch must be enabled");
    if (c.use_cross && c.branch_count() != 2)
        fail("use_cross requires both branches (cross-branch attention needs two token scales)");
    if (c.use_short_branch && (c.patch_short <= 0 || c.image_size % c.patch_short != 0))
        fail("image_size " + std::to_string(c.image_size) + " is not divisible by patch_short " +
             std::to_string(c.patch_short));
    if (c.use_long_branch && (c.patch_long <= 0 || c.image_size % c.patch_long != 0))
        fail("image_size " + std::to_string(c.image_size) + " is not divisible by patch_long " +
             std::to_string(c.patch_long));
    if (c.embed_dim <= 0 || c.embed_dim % 4 != 0)
        fail("embed_dim must be positive and divisible by 4 (positional encoding)");
    if (c.heads <= 0 || c.embed_dim % c.heads != 0)
        fail("embed_dim " + std::to_string(c.embed_dim) + " is not divisible by heads " +
             std::to_string(c.heads));
    if (c.use_spatial) {
        if (c.window <= 0) fail("window must be positive");
        if (c.use_short_branch && c.grid_short() % c.window != 0)
            fail("short-branch grid " + std::to_string(c.grid_short()) + " is not divisible by window " +
                 std::to_string(c.window));
        if (c.use_long_branch && c.grid_long() % c.window != 0)
            fail("long-branch grid " + std::to_string(c.grid_long()) + " is not divisible by window " +
                 std::to_string(c.window));
    }
    if (c.use_channel && (c.reduction <= 0 || c.embed_dim % c.reduction != 0))
        fail("embed_dim " + std::to_string(c.embed_dim) + " is not divisible by reduction " +
             std::to_string(c.reduction));
    if (c.depth < 0) fail("depth must be non-negative");
    if (c.head_hidden <= 0) fail("head_hidden must be positive");
}

ModelConfig reduced_config() {
    ModelConfig c;
    c.image_size = 64;
    c.embed_dim = 32;
    c.window = 2;
    c.depth = 1;
    c.head_hidden = 32;
    return c;
}

TensorPtr Model::find_parameter(const std::string& name) const {
    for (const auto& [n, t] : parameters)
        if (n == name) return t;
    return nullptr;
}

namespace {

struct Builder {
    Rng rng;
    std::vector<std::pair<std::string, TensorPtr>>* registry;

    TensorPtr weight(const std::string& name, Shape shape, int64_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> d(static_cast<size_t>(shape_size(shape)));
        for (auto& v : d) v = rng.uniform(-bound, bound);
        auto t = tensor(std::move(shape), std::move(d), true);
        registry->emplace_back(name, t);
        return t;
    }

    TensorPtr bias(const std::string& name, int64_t n) {
        auto t = zeros({n}, true);
        registry->emplace_back(name, t);
        return t;
    }

    TensorPtr gain(const std::string& name, int64_t n) {
        auto t = full({n}, 1.0, true);
        registry->emplace_back(name, t);
        return t;
    }
};

BranchParams build_branch(Builder& b, const ModelConfig& c, const std::string& prefix,
                          int64_t patch, int64_t grid) {
    const int64_t d = c.embed_dim;
    BranchParams bp;
    const int64_t raw = 3 * patch * patch;
    bp.W_e = b.weight(prefix + ".embed.W_e", {raw, d}, raw);
    bp.pos = positional_encoding(grid, grid, d);
    for (int64_t k = 0; k < c.depth; ++k) {
        const std::string bk = prefix + ".block" + std::to_string(k);
        BlockParams blk;
        if (c.use_spatial) {
            blk.ln1.gamma = b.gain(bk + ".ln1.gamma", d);
            blk.ln1.beta = b.bias(bk + ".ln1.beta", d);
            blk.attn.W_q = b.weight(bk + ".attn.W_q", {d, d}, d);
            blk.attn.W_k = b.weight(bk + ".attn.W_k", {d, d}, d);
            blk.attn.W_v = b.weight(bk + ".attn.W_v", {d, d}, d);
            blk.attn.W_o = b.weight(bk + ".attn.W_o", {d, d}, d);
            blk.attn.heads = c.heads;
        }
        if (c.use_channel) {
            const int64_t dr = d / c.reduction;
            blk.chattn.W1 = b.weight(bk + ".chattn.W1", {dr, d}, d);
            blk.chattn.b1 = b.bias(bk + ".chattn.b1", dr);
            blk.chattn.W2 = b.weight(bk + ".chattn.W2", {d, dr}, dr);
            blk.chattn.b2 = b.bias(bk + ".chattn.b2", d);
            blk.chattn.reduction = c.reduction;
        }
        blk.ln2.gamma = b.gain(bk + ".ln2.gamma", d);
        blk.ln2.beta = b.bias(bk + ".ln2.beta", d);
        blk.mlp.W1 = b.weight(bk + ".mlp.W1", {d, 4 * d}, d);
        blk.mlp.b1 = b.bias(bk + ".mlp.b1", 4 * d);
        blk.mlp.W2 = b.weight(bk + ".mlp.W2", {4 * d, d}, 4 * d);
        blk.mlp.b2 = b.bias(bk + ".mlp.b2", d);
        bp.blocks.push_back(std::move(blk));
    }
    return bp;
}

}  // namespace

Model build_model(const ModelConfig& config) {
    validate_config(config);
    Model m;
    m.config = config;
    Builder b{Rng(config.seed), &m.parameters};
    const int64_t d = config.embed_dim;

    if (config.use_short_branch)
        m.short_branch = build_branch(b, config, "branch.short", config.patch_short, config.grid_short());
    if (config.use_long_branch)
        m.long_branch = build_branch(b, config, "branch.long", config.patch_long, config.grid_long());

    if (config.use_cross) {
        m.cross_short.W_q = b.weight("cross.short.W_q", {d, d}, d);
        m.cross_short.W_k = b.weight("cross.short.W_k", {d, d}, d);
        m.cross_short.W_v = b.weight("cross.short.W_v", {d, d}, d);
        m.cross_short.heads = config.heads;
        m.cross_long.W_q = b.weight("cross.long.W_q", {d, d}, d);
        m.cross_long.W_k = b.weight("cross.long.W_k", {d, d}, d);
        m.cross_long.W_v = b.weight("cross.long.W_v", {d, d}, d);
        m.cross_long.heads = config.heads;
    }

    const int64_t fused = d * config.branch_count();
    m.head.W1 = b.weight("head.W1", {fused, config.head_hidden}, fused);
    m.head.b1 = b.bias("head.b1", config.head_hidden);
    m.head.W2 = b.weight("head.W2", {config.head_hidden, 1}, config.head_hidden);
    m.head.b2 = b.bias("head.b2", 1);
    return m;
}

int64_t expected_parameter_count(const ModelConfig& c) {
    const int64_t d = c.embed_dim;
    auto branch = [&](int64_t patch) {
        int64_t n = 3 * patch * patch * d;  // embedding
        int64_t per_block = 2 * d + 8 * d * d + 5 * d;  // ln2 + mlp
        if (c.use_spatial) per_block += 2 * d + 4 * d * d;
        if (c.use_channel) per_block += 2 * d * d / c.reduction + d / c.reduction + d;
        return n + c.depth * per_block;
    };
    int64_t total = 0;
    if (c.use_short_branch) total += branch(c.patch_short);
    if (c.use_long_branch) total += branch(c.patch_long);
    if (c.use_cross) total += 2 * 3 * d * d;
    const int64_t fused = d * c.branch_count();
    total += fused * c.head_hidden + c.head_hidden + c.head_hidden + 1;
    return total;
}

namespace {

int64_t* sink(FlopsBreakdown* b, int64_t FlopsBreakdown::* field) {
    return b ? &(b->*field) : nullptr;
}

TokenGrid run_branch(const Model& m, const BranchParams& bp, const TensorPtr& image, int64_t patch,
                     int64_t grid, FlopsBreakdown* macs) {
    TokenGrid tg;
    {
        MacScope scope(sink(macs, &FlopsBreakdown::patch_embed));
        auto raw = patchify(image, patch);
        tg = embed_tokens(raw, bp.W_e, bp.pos, grid, grid, patch);
    }
    BlockToggles toggles{m.config.use_spatial, m.config.use_channel};
    BlockMacSinks sinks{sink(macs, &FlopsBreakdown::window_attention_projections),
                        sink(macs, &FlopsBreakdown::window_attention_scores),
                        sink(macs, &FlopsBreakdown::channel_attention),
                        sink(macs, &FlopsBreakdown::mlp)};
    for (const auto& blk : bp.blocks)
        tg = transformer_block(tg, blk, toggles, m.config.window, macs ? &sinks : nullptr);
    return tg;
}

}  // namespace

ForwardResult forward(const Model& model, const TensorPtr& image, FlopsBreakdown* macs) {
    const auto& c = model.config;
    if (image->rank() != 3 || image->shape[0] != 3 || image->shape[1] != c.image_size ||
        image->shape[2] != c.image_size)
        throw ShapeError("forward: image " + shape_str(image->shape) + " does not match configured size [3," +
                         std::to_string(c.image_size) + "," + std::to_string(c.image_size) + "]");

    ForwardResult r;
    std::optional<TokenGrid> head_short, head_long;
    if (c.use_short_branch) {
        auto f = run_branch(model, model.short_branch, image, c.patch_short, c.grid_short(), macs);
        r.feats.f_short = f;
        head_short = f;
    }
    if (c.use_long_branch) {
        auto f = run_branch(model, model.long_branch, image, c.patch_long, c.grid_long(), macs);
        r.feats.f_long = f;
        head_long = f;
    }

    if (c.use_cross) {
        MacScope scope(sink(macs, &FlopsBreakdown::cross_attention));
        auto [g_s, g_l] =
            cross_branch_attention(*r.feats.f_short, *r.feats.f_long, model.cross_short, model.cross_long);
        r.feats.g_short = g_s;
        r.feats.g_long = g_l;
        head_short->tokens = add(r.feats.f_short->tokens, g_s.tokens);
        head_long->tokens = add(r.feats.f_long->tokens, g_l.tokens);
    }

    std::vector<TensorPtr> pooled;
    if (head_short) pooled.push_back(mean_rows(head_short->tokens));
    if (head_long) pooled.push_back(mean_rows(head_long->tokens));
    auto z = pooled.size() == 1 ? pooled[0] : concat_cols(pooled);

    {
        MacScope scope(sink(macs, &FlopsBreakdown::head));
        auto hidden = relu(add_row_bias(matmul(z, model.head.W1), model.head.b1));
        auto out = add_row_bias(matmul(hidden, model.head.W2), model.head.b2);
        r.mos = reshape(out, {1});
    }

    if (macs) macs->finalize(c.total_tokens());
    return r;
}

std::string validate_ablation(const ModelConfig& c) {
    if (c.branch_count() == 2 && c.use_spatial && c.use_channel && c.use_cross) return "multi-dual";
    if (c.branch_count() == 1 && !c.use_cross) {
        if (c.use_spatial && c.use_channel) return "single-both";
        if (c.use_spatial && !c.use_channel) return "single-spatial";
        if (!c.use_spatial && c.use_channel) return "single-channel";
    }
    return "custom";
}

}  // namespace msscanet
