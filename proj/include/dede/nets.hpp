#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dede/mask.hpp"
#include "dede/ops.hpp"
#include "dede/optim.hpp"
#include "dede/patch.hpp"

namespace dede {

template <class S>
using NamedParams = std::vector<std::pair<std::string, TensorPtr<S>>>;

template <class S>
std::vector<TensorPtr<S>> param_list(const NamedParams<S>& named) {
    std::vector<TensorPtr<S>> out;
    out.reserve(named.size());
    for (const auto& [name, p] : named) out.push_back(p);
    return out;
}

template <class S>
struct Linear {
    TensorPtr<S> weight; // [in, out]
    TensorPtr<S> bias;   // [out]

    Linear() = default;
    Linear(int in, int out, Rng& rng, S init_std = S(0.02), S bias_init = S(0))
        : weight(randn<S>({in, out}, rng, init_std, true)),
          bias(full<S>({out}, bias_init, true)) {}

    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return add(matmul(x, weight), bias); }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <class S>
struct LayerNormAffine {
    TensorPtr<S> gain;  // [width]
    TensorPtr<S> shift; // [width]

    LayerNormAffine() = default;
    explicit LayerNormAffine(int width)
        : gain(ones<S>({width}, true)), shift(zeros<S>({width}, true)) {}

    TensorPtr<S> operator()(const TensorPtr<S>& x) const {
        return add(mul(layernorm_lastdim(x), gain), shift);
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        out.emplace_back(prefix + ".gain", gain);
        out.emplace_back(prefix + ".shift", shift);
    }
};

// Pre-layernorm block: x += MHSA(LN(x)); x += MLP(LN(x)). MLP expands 4x.
template <class S>
struct TransformerBlock {
    int width = 0;
    int heads = 0;
    LayerNormAffine<S> ln_attn, ln_mlp;
    Linear<S> query, key, value, attn_out, mlp_in, mlp_out;

    TransformerBlock() = default;
    TransformerBlock(int width_, int heads_, Rng& rng)
        : width(width_), heads(heads_),
          ln_attn(width_), ln_mlp(width_),
          query(width_, width_, rng), key(width_, width_, rng), value(width_, width_, rng),
          attn_out(width_, width_, rng),
          mlp_in(width_, 4 * width_, rng), mlp_out(4 * width_, width_, rng) {
        if (width_ % heads_ != 0) throw ContractError("transformer block: heads must divide width");
    }

    TensorPtr<S> operator()(const TensorPtr<S>& tokens) const {
        const int hd = width / heads;
        const S inv_sqrt_hd = S(1) / static_cast<S>(std::sqrt(static_cast<double>(hd)));
        auto h = ln_attn(tokens);
        auto q = query(h), k = key(h), v = value(h);
        std::vector<TensorPtr<S>> ctx;
        ctx.reserve(static_cast<size_t>(heads));
        for (int i = 0; i < heads; ++i) {
            auto qh = slice(q, 2, i * hd, (i + 1) * hd);
            auto kh = slice(k, 2, i * hd, (i + 1) * hd);
            auto vh = slice(v, 2, i * hd, (i + 1) * hd);
            auto att = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt_hd));
            ctx.push_back(matmul(att, vh));
        }
        auto x = add(tokens, attn_out(concat(ctx, 2)));
        return add(x, mlp_out(gelu(mlp_in(ln_mlp(x)))));
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        ln_attn.collect(prefix + ".ln_attn", out);
        query.collect(prefix + ".query", out);
        key.collect(prefix + ".key", out);
        value.collect(prefix + ".value", out);
        attn_out.collect(prefix + ".attn_out", out);
        ln_mlp.collect(prefix + ".ln_mlp", out);
        mlp_in.collect(prefix + ".mlp_in", out);
        mlp_out.collect(prefix + ".mlp_out", out);
    }
};

// Fixed-width stack with a final layernorm; output shape equals input shape.
template <class S>
struct TransformerStack {
    std::vector<TransformerBlock<S>> blocks;
    LayerNormAffine<S> ln_final;

    TransformerStack() = default;
    TransformerStack(int depth, int width, int heads, Rng& rng) : ln_final(width) {
        for (int i = 0; i < depth; ++i) blocks.emplace_back(width, heads, rng);
    }

    TensorPtr<S> operator()(TensorPtr<S> tokens) const {
        for (const auto& b : blocks) tokens = b(tokens);
        return ln_final(tokens);
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + ".block" + std::to_string(i), out);
        ln_final.collect(prefix + ".ln_final", out);
    }
};

// ---------------------------------------------------------------------------
// Victim encoder: image patches -> L2-normalised embedding.

struct EncoderConfig {
    PatchGrid grid;
    int width = 64;
    int depth = 2;
    int heads = 4;
    int embed_dim = 64;
};

template <class S>
struct VictimEncoder {
    EncoderConfig cfg;
    Linear<S> patch_proj;     // patch_dim -> width
    TensorPtr<S> class_token; // [1, width]
    TensorPtr<S> pos;         // [P+1, width], slot 0 is the class token
    TransformerStack<S> stack;
    Linear<S> head;           // width -> embed_dim

    VictimEncoder() = default;
    VictimEncoder(const EncoderConfig& c, Rng& rng)
        : cfg(c),
          patch_proj(c.grid.patch_dim(), c.width, rng),
          class_token(randn<S>({1, c.width}, rng, S(0.02), true)),
          pos(randn<S>({c.grid.count() + 1, c.width}, rng, S(0.02), true)),
          stack(c.depth, c.width, c.heads, rng),
          head(c.width, c.embed_dim, rng) {
        c.grid.validate();
    }

    // patches: [B, P, patch_dim] -> embeddings [B, embed_dim], unit L2 norm.
    TensorPtr<S> operator()(const TensorPtr<S>& patches) const {
        if (patches->shape.size() != 3 || patches->shape[1] != cfg.grid.count() ||
            patches->shape[2] != cfg.grid.patch_dim())
            throw ContractError("encoder: patch batch " + shape_str(patches->shape) +
                                " does not match grid");
        int b = patches->shape[0];
        auto tok = patch_proj(patches);
        auto cls = add(zeros<S>({b, 1, cfg.width}), reshape(class_token, {1, 1, cfg.width}));
        tok = concat<S>({cls, tok}, 1);
        tok = add(tok, pos);
        tok = stack(tok);
        auto pooled = reshape(slice(tok, 1, 0, 1), {b, cfg.width});
        return l2_normalize_rows(head(pooled));
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        patch_proj.collect(prefix + ".patch_proj", out);
        out.emplace_back(prefix + ".class_token", class_token);
        out.emplace_back(prefix + ".pos", pos);
        stack.collect(prefix + ".stack", out);
        head.collect(prefix + ".head", out);
    }

    NamedParams<S> named_parameters() const {
        NamedParams<S> out;
        collect("encoder", out);
        return out;
    }

    std::vector<TensorPtr<S>> parameters() const { return param_list(named_parameters()); }

    VictimEncoder clone() const {
        Rng throwaway(0);
        VictimEncoder out(cfg, throwaway);
        auto src = named_parameters();
        auto dst = out.named_parameters();
        for (size_t i = 0; i < src.size(); ++i) dst[i].second->data = src[i].second->data;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Mask-conditioned patch encoder: visible patches -> per-patch tokens.

struct PatchEncoderConfig {
    PatchGrid grid;
    int width = 64;
    int depth = 2;
    int heads = 4;
};

// Constant tensors describing one batch of masks. `select` picks visible
// patch rows ([B,k,P] one-hot), `scatter` is its transpose, `hidden_col`
// marks masked slots ([B,P,1]).
template <class S>
struct MaskBatch {
    int visible_count = 0;
    TensorPtr<S> visible;    // [B, k, patch_dim]; null when k == 0
    TensorPtr<S> select;     // [B, k, P]
    TensorPtr<S> scatter;    // [B, P, k]
    TensorPtr<S> hidden_col; // [B, P, 1]
};

template <class S>
MaskBatch<S> build_mask_batch(std::span<const S> patch_data, int batch,
                              const std::vector<MaskSpec>& masks, const PatchGrid& g) {
    const int p = g.count(), pd = g.patch_dim();
    if (static_cast<int>(masks.size()) != batch)
        throw ContractError("mask batch: mask count does not match batch");
    if (static_cast<int64_t>(patch_data.size()) != static_cast<int64_t>(batch) * p * pd)
        throw ContractError("mask batch: patch data size mismatch");
    MaskBatch<S> out;
    int k = masks.empty() ? 0 : masks[0].visible_count();
    for (const auto& m : masks) {
        if (m.patch_count != p) throw ContractError("mask batch: mask patch count mismatch");
        if (m.visible_count() != k) throw ContractError("mask batch: uneven visible counts in batch");
    }
    out.visible_count = k;
    out.hidden_col = ones<S>({batch, p, 1});
    for (int b = 0; b < batch; ++b)
        for (int v : masks[static_cast<size_t>(b)].visible)
            out.hidden_col->data[static_cast<size_t>(b) * p + v] = S(0);
    if (k == 0) return out;
    out.visible = zeros<S>({batch, k, pd});
    out.select = zeros<S>({batch, k, p});
    out.scatter = zeros<S>({batch, p, k});
    for (int b = 0; b < batch; ++b) {
        const auto& vis = masks[static_cast<size_t>(b)].visible;
        for (int i = 0; i < k; ++i) {
            int v = vis[static_cast<size_t>(i)];
            std::copy_n(patch_data.data() + (static_cast<int64_t>(b) * p + v) * pd, pd,
                        out.visible->data.data() + (static_cast<int64_t>(b) * k + i) * pd);
            out.select->data[(static_cast<int64_t>(b) * k + i) * p + v] = S(1);
            out.scatter->data[(static_cast<int64_t>(b) * p + v) * k + i] = S(1);
        }
    }
    return out;
}

template <class S>
struct PatchEncoder {
    PatchEncoderConfig cfg;
    Linear<S> patch_proj; // patch_dim -> width
    TensorPtr<S> pos;     // [P, width]
    TransformerStack<S> stack;

    PatchEncoder() = default;
    PatchEncoder(const PatchEncoderConfig& c, Rng& rng)
        : cfg(c),
          patch_proj(c.grid.patch_dim(), c.width, rng),
          pos(randn<S>({c.grid.count(), c.width}, rng, S(0.02), true)),
          stack(c.depth, c.width, c.heads, rng) {
        c.grid.validate();
    }

    // One token per visible patch; position information enters through the
    // selected positional embeddings. Empty masks yield no tokens.
    std::optional<TensorPtr<S>> operator()(const MaskBatch<S>& mb) const {
        if (mb.visible_count == 0) return std::nullopt;
        auto tok = add(patch_proj(mb.visible), matmul(mb.select, pos));
        return stack(tok);
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        patch_proj.collect(prefix + ".patch_proj", out);
        out.emplace_back(prefix + ".pos", pos);
        stack.collect(prefix + ".stack", out);
    }
};

// ---------------------------------------------------------------------------
// Decoder: (global embedding, visible-patch tokens) -> full image patches.

struct DecoderConfig {
    PatchGrid grid;
    int width = 64;
    int depth = 2;
    int heads = 4;
    int embed_dim = 64;
};

template <class S>
struct Decoder {
    DecoderConfig cfg;
    Linear<S> embed_proj;   // embed_dim -> width (conditioning token)
    TensorPtr<S> embed_pos; // [1, width]
    TensorPtr<S> mask_token; // [1, width]
    TensorPtr<S> pos;        // [P, width]
    TransformerStack<S> stack;
    Linear<S> pixel_head;    // width -> patch_dim

    Decoder() = default;
    Decoder(const DecoderConfig& c, Rng& rng)
        : cfg(c),
          embed_proj(c.embed_dim, c.width, rng),
          embed_pos(randn<S>({1, c.width}, rng, S(0.02), true)),
          mask_token(randn<S>({1, c.width}, rng, S(0.02), true)),
          pos(randn<S>({c.grid.count(), c.width}, rng, S(0.02), true)),
          stack(c.depth, c.width, c.heads, rng),
          // bias starts mid-range so the output clamp opens with live gradients
          pixel_head(c.width, c.grid.patch_dim(), rng, S(0.02), S(0.5)) {
        c.grid.validate();
    }

    // embedding: [B, embed_dim]; tokens from a compatible patch encoder (or
    // nothing). Returns predicted patches [B, P, patch_dim] clamped to [0,1];
    // every slot is predicted, visible ones included.
    TensorPtr<S> operator()(const TensorPtr<S>& embedding,
                            const std::optional<TensorPtr<S>>& tokens,
                            const MaskBatch<S>& mb) const {
        if (embedding->shape.size() != 2 || embedding->shape[1] != cfg.embed_dim)
            throw ContractError("decoder: embedding " + shape_str(embedding->shape) +
                                " does not match embed_dim " + std::to_string(cfg.embed_dim));
        int b = embedding->shape[0];
        const int p = cfg.grid.count();
        auto slots = add(matmul(mb.hidden_col, mask_token), pos); // [B,P,W]
        if (tokens) slots = add(slots, matmul(mb.scatter, *tokens));
        auto etok = add(reshape(embed_proj(embedding), {b, 1, cfg.width}), embed_pos);
        auto tok = concat<S>({etok, slots}, 1); // [B, P+1, W]
        tok = stack(tok);
        auto patch_out = pixel_head(slice(tok, 1, 1, p + 1)); // [B,P,patch_dim]
        return clamp01(patch_out);
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        embed_proj.collect(prefix + ".embed_proj", out);
        out.emplace_back(prefix + ".embed_pos", embed_pos);
        out.emplace_back(prefix + ".mask_token", mask_token);
        out.emplace_back(prefix + ".pos", pos);
        stack.collect(prefix + ".stack", out);
        pixel_head.collect(prefix + ".pixel_head", out);
    }
};

// Image batch (B*C*H*W pixels, any float source) -> constant patch tensor [B,P,pd].
template <class S, class Src>
TensorPtr<S> patch_tokens(std::span<const Src> pixels, int batch, const PatchGrid& g) {
    const int pd = g.patch_dim(), p = g.count(), px = g.pixels();
    if (static_cast<int64_t>(pixels.size()) != static_cast<int64_t>(batch) * px)
        throw ContractError("patch_tokens: pixel count does not match batch geometry");
    std::vector<S> data(static_cast<size_t>(batch) * p * pd);
    std::vector<S> img(static_cast<size_t>(px));
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < px; ++i) img[static_cast<size_t>(i)] = static_cast<S>(pixels[static_cast<int64_t>(b) * px + i]);
        auto patches = patchify<S>(img, g);
        std::copy(patches.begin(), patches.end(), data.begin() + static_cast<int64_t>(b) * p * pd);
    }
    return tensor<S>({batch, p, pd}, std::move(data));
}

} // namespace dede
