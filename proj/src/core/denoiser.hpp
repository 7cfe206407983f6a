#pragma once

// Tiny DiT-style conditional network producing x-prediction from
// (x_t, t, class), with an intermediate token tap for feature alignment.
// Blocks: [RMS norm -> multi-head self-attention with 2-d rotary embedding ->
// residual] then [RMS norm -> SwiGLU feed-forward -> residual]. Conditioning
// is injected additively into every token after patch embedding.

#include "core/params.hpp"
#include "core/tensor_ops.hpp"

namespace pixelgen {

struct DenoiserConfig {
    int64_t image_size = 16;
    int64_t channels = 3;
    int64_t patch = 4;
    int64_t width = 64;
    int64_t depth = 4;
    int64_t heads = 4;
    int64_t ffn_hidden = 128;
    int64_t num_classes = 8;  // null class index == num_classes
    int64_t repa_tap = 2;     // block whose output tokens are exposed
    double class_drop_prob = 0.1;

    int64_t grid() const { return image_size / patch; }
    int64_t tokens() const { return grid() * grid(); }
    int64_t head_dim() const { return width / heads; }
    int64_t token_dim() const { return channels * patch * patch; }

    void validate() const {
        if (image_size % patch != 0)
            fail(ErrorCode::config, "denoiser: image size " + std::to_string(image_size) +
                                        " not divisible by patch " + std::to_string(patch));
        if (width % heads != 0)
            fail(ErrorCode::config, "denoiser: width " + std::to_string(width) + " not divisible by heads " +
                                        std::to_string(heads));
        if (head_dim() % 4 != 0)
            fail(ErrorCode::config, "denoiser: head dim " + std::to_string(head_dim()) +
                                        " must be divisible by 4 for 2-d rotary embedding");
        if (width % 2 != 0) fail(ErrorCode::config, "denoiser: width must be even");
        if (repa_tap < 0 || repa_tap >= depth)
            fail(ErrorCode::config, "denoiser: repa_tap " + std::to_string(repa_tap) +
                                        " out of range for depth " + std::to_string(depth));
        if (depth < 1 || heads < 1 || num_classes < 1) fail(ErrorCode::config, "denoiser: bad architecture");
        if (class_drop_prob < 0 || class_drop_prob > 1)
            fail(ErrorCode::config, "denoiser: class_drop_prob must lie in [0,1]");
    }

    // Exact trainable parameter count (without the alignment projection).
    // Attention and SwiGLU projections carry no biases.
    int64_t param_count() const {
        int64_t d = width, f = ffn_hidden, td = token_dim();
        int64_t embed = td * d + d;
        int64_t tmlp = 2 * (d * d + d);
        int64_t cls = (num_classes + 1) * d;
        int64_t block = d /*norm1*/ + 4 * d * d /*qkv+out*/ + d /*norm2*/ + 3 * d * f /*swiglu*/;
        int64_t head = d /*final norm*/ + d * td + td;
        return embed + tmlp + cls + depth * block + head;
    }
};

template <typename T>
struct DenoiserOutput {
    Tensor<T> x_pred;  // [B, C, H, W]
    Tensor<T> hidden;  // [B, P, width] tokens from the tap block
};

template <typename T>
class Denoiser {
public:
    Denoiser(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = Rng::derive(seed, RngPurpose::init_model);
        const int64_t d = cfg_.width, f = cfg_.ffn_hidden, td = cfg_.token_dim();
        const T std_w = T(0.02);
        auto w = [&](const std::string& name, Shape shape) {
            return params_.add(name, Tensor<T>::randn(std::move(shape), rng, std_w));
        };
        auto zerosp = [&](const std::string& name, Shape shape) {
            return params_.add(name, Tensor<T>::zeros(std::move(shape)));
        };
        auto ones = [&](const std::string& name, Shape shape) {
            return params_.add(name, Tensor<T>::full(std::move(shape), T(1)));
        };
        patch_w_ = w("patch_embed.w", {td, d});
        patch_b_ = zerosp("patch_embed.b", {d});
        tmlp_w1_ = w("time_mlp.w1", {d, d});
        tmlp_b1_ = zerosp("time_mlp.b1", {d});
        tmlp_w2_ = w("time_mlp.w2", {d, d});
        tmlp_b2_ = zerosp("time_mlp.b2", {d});
        class_table_ = w("class_embed.table", {cfg_.num_classes + 1, d});
        blocks_.resize(static_cast<size_t>(cfg_.depth));
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            std::string p = "blocks." + std::to_string(i) + ".";
            Block& b = blocks_[static_cast<size_t>(i)];
            b.norm1_g = ones(p + "norm1.g", {d});
            b.wq = w(p + "attn.q.w", {d, d});
            b.wk = w(p + "attn.k.w", {d, d});
            b.wv = w(p + "attn.v.w", {d, d});
            b.wo = w(p + "attn.out.w", {d, d});
            b.norm2_g = ones(p + "norm2.g", {d});
            b.wg = w(p + "ffn.gate.w", {d, f});
            b.wu = w(p + "ffn.up.w", {d, f});
            b.wd = w(p + "ffn.down.w", {f, d});
        }
        final_norm_g_ = ones("final_norm.g", {d});
        // zero-init head: x_pred == 0 at initialization
        head_w_ = zerosp("head.w", {d, td});
        head_b_ = zerosp("head.b", {td});
    }

    const DenoiserConfig& config() const { return cfg_; }
    int64_t null_class() const { return cfg_.num_classes; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    DenoiserOutput<T> forward(const Tensor<T>& x_t, const std::vector<T>& t,
                              const std::vector<int64_t>& classes) const {
        const int64_t d = cfg_.width;
        if (x_t.ndim() != 4 || x_t.dim(1) != cfg_.channels || x_t.dim(2) != cfg_.image_size ||
            x_t.dim(3) != cfg_.image_size)
            fail(ErrorCode::dimension, "denoiser: input " + shape_str(x_t.shape()) + " does not match config");
        int64_t B = x_t.dim(0);
        if (static_cast<int64_t>(t.size()) != B || static_cast<int64_t>(classes.size()) != B)
            fail(ErrorCode::dimension, "denoiser: need one t and one class per sample");
        for (T ti : t)
            if (ti < T(0) || ti > T(1)) fail(ErrorCode::contract, "denoiser: t must lie in [0,1]");
        for (int64_t c : classes)
            if (c < 0 || c > cfg_.num_classes)
                fail(ErrorCode::contract, "denoiser: class " + std::to_string(c) + " out of range [0," +
                                              std::to_string(cfg_.num_classes) + "]");

        Tensor<T> tokens = linear(patchify(x_t, cfg_.patch), patch_w_, patch_b_);  // [B,P,d]
        Tensor<T> temb = silu(linear(time_embedding(t, d), tmlp_w1_, tmlp_b1_));
        Tensor<T> cond = add(linear(temb, tmlp_w2_, tmlp_b2_), index_rows(class_table_, classes));
        tokens = add(tokens, reshape(cond, {B, 1, d}));

        DenoiserOutput<T> out;
        int64_t P = cfg_.tokens(), heads = cfg_.heads, dh = cfg_.head_dim(), grid = cfg_.grid();
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            const Block& blk = blocks_[static_cast<size_t>(i)];
            Tensor<T> h = rms_norm(tokens, blk.norm1_g);
            auto split = [&](const Tensor<T>& y) {
                return reshape(permute(reshape(y, {B, P, heads, dh}), {0, 2, 1, 3}), {B * heads, P, dh});
            };
            Tensor<T> q = split(linear_nb(h, blk.wq));
            Tensor<T> k = split(linear_nb(h, blk.wk));
            Tensor<T> v = split(linear_nb(h, blk.wv));
            q = rope2d(reshape(q, {B, heads, P, dh}), grid, grid);
            k = rope2d(reshape(k, {B, heads, P, dh}), grid, grid);
            q = reshape(q, {B * heads, P, dh});
            k = reshape(k, {B * heads, P, dh});
            Tensor<T> scores = mul_scalar(bmm_nt(q, k), static_cast<T>(1.0 / std::sqrt(double(dh))));
            Tensor<T> attn = softmax(scores, -1);
            Tensor<T> ctx = bmm(attn, v);  // [B*heads, P, dh]
            ctx = reshape(permute(reshape(ctx, {B, heads, P, dh}), {0, 2, 1, 3}), {B, P, d});
            tokens = add(tokens, linear_nb(ctx, blk.wo));

            Tensor<T> h2 = rms_norm(tokens, blk.norm2_g);
            Tensor<T> ffn = mul(silu(linear_nb(h2, blk.wg)), linear_nb(h2, blk.wu));
            tokens = add(tokens, linear_nb(ffn, blk.wd));
            if (i == cfg_.repa_tap) out.hidden = tokens;
        }
        Tensor<T> final_tokens = linear(rms_norm(tokens, final_norm_g_), head_w_, head_b_);
        out.x_pred = unpatchify(final_tokens, cfg_.patch, cfg_.channels, cfg_.image_size, cfg_.image_size);
        return out;
    }

    // Conditional and null-conditioned outputs sharing parameters and x_t.
    std::pair<DenoiserOutput<T>, DenoiserOutput<T>> forward_cfg_pair(const Tensor<T>& x_t,
                                                                     const std::vector<T>& t,
                                                                     const std::vector<int64_t>& classes) const {
        std::vector<int64_t> null_c(classes.size(), null_class());
        return {forward(x_t, t, classes), forward(x_t, t, null_c)};
    }

private:
    struct Block {
        Tensor<T> norm1_g, wq, wk, wv, wo;
        Tensor<T> norm2_g, wg, wu, wd;
    };

    DenoiserConfig cfg_;
    ParamStore<T> params_;
    Tensor<T> patch_w_, patch_b_;
    Tensor<T> tmlp_w1_, tmlp_b1_, tmlp_w2_, tmlp_b2_;
    Tensor<T> class_table_;
    std::vector<Block> blocks_;
    Tensor<T> final_norm_g_, head_w_, head_b_;
};

}  // namespace pixelgen
