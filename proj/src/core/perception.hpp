#pragma once

// Frozen feature extractors and the auxiliary losses: local multi-layer
// feature loss, global patch-cosine loss, intermediate-feature alignment,
// plus per-sample noise gating and the combined objective.

#include "core/flow.hpp"
#include "core/tensor_ops.hpp"

namespace pixelgen {

// One conv stage of the local extractor.
struct LocalStage {
    int64_t in_ch = 3;
    int64_t out_ch = 8;
    int64_t stride = 2;
    int64_t kernel = 3;  // 3 (pad 1) or 1 (pad 0)
    bool act = true;     // silu
};

// Small frozen conv pyramid standing in for a pretrained multi-level feature
// network. Weights are seeded and never receive gradient.
template <typename T>
struct LocalFeatureNet {
    std::vector<LocalStage> stages;
    std::vector<Tensor<T>> weights;
    std::vector<Tensor<T>> biases;

    static LocalFeatureNet make(std::vector<LocalStage> stages, uint64_t seed) {
        LocalFeatureNet net;
        net.stages = std::move(stages);
        Rng rng = Rng::derive(seed, RngPurpose::init_lpips);
        for (const LocalStage& st : net.stages) {
            T std_w = static_cast<T>(std::sqrt(2.0 / static_cast<double>(st.in_ch * st.kernel * st.kernel)));
            net.weights.push_back(Tensor<T>::randn({st.out_ch, st.in_ch, st.kernel, st.kernel}, rng, std_w));
            net.biases.push_back(Tensor<T>::uniform({st.out_ch}, rng, T(-0.1), T(0.1)));
        }
        return net;
    }

    static LocalFeatureNet make_default(uint64_t seed, std::vector<int64_t> widths = {8, 16, 32}) {
        std::vector<LocalStage> stages;
        int64_t in_ch = 3;
        for (int64_t w : widths) {
            stages.push_back({in_ch, w, 2, 3, true});
            in_ch = w;
        }
        return make(std::move(stages), seed);
    }

    // Per-stage feature maps; stage l of a stride-2 pyramid has spatial size H/2^l.
    std::vector<Tensor<T>> forward(const Tensor<T>& img) const {
        int64_t down = 1;
        for (const LocalStage& st : stages) down *= st.stride;
        if (img.ndim() != 4 || img.dim(2) % down != 0 || img.dim(3) % down != 0)
            fail(ErrorCode::config, "local_features: spatial size " + shape_str(img.shape()) +
                                        " not divisible by pyramid factor " + std::to_string(down));
        std::vector<Tensor<T>> feats;
        Tensor<T> h = img;
        for (size_t l = 0; l < stages.size(); ++l) {
            const LocalStage& st = stages[l];
            int64_t pad = st.kernel == 3 ? 1 : 0;
            h = conv2d(h, weights[l], st.stride, pad);
            h = add(h, reshape(biases[l], {1, st.out_ch, 1, 1}));
            if (st.act) h = silu(h);
            feats.push_back(h);
        }
        return feats;
    }
};

// Unit-normalize each spatial location's channel vector.
template <typename T>
Tensor<T> channel_unit_normalize(const Tensor<T>& f) {
    Tensor<T> n2 = sum(square(f), {1}, true);
    return mul(f, rsqrt(add_scalar(n2, T(1e-24))));
}

// Per-sample multi-level feature distance on already-extracted feature lists:
// sum over layers of the spatial mean of ||w_l (.) (norm(fa) - norm(fb))||^2.
template <typename T>
Tensor<T> lpips_per_sample(const std::vector<Tensor<T>>& fa, const std::vector<Tensor<T>>& fb,
                           const std::vector<Tensor<T>>& layer_weights) {
    if (fa.size() != fb.size() || fa.size() != layer_weights.size())
        fail(ErrorCode::dimension, "lpips: feature/weight list sizes disagree");
    Tensor<T> total;
    for (size_t l = 0; l < fa.size(); ++l) {
        if (fa[l].shape() != fb[l].shape())
            fail(ErrorCode::dimension, "lpips: layer " + std::to_string(l) + " shapes disagree: " +
                                           shape_str(fa[l].shape()) + " vs " + shape_str(fb[l].shape()));
        Tensor<T> d = sub(channel_unit_normalize(fa[l]), channel_unit_normalize(fb[l]));
        Tensor<T> wd = mul(d, layer_weights[l]);
        Tensor<T> per = mean(sum(square(wd), {1}, true), {1, 2, 3});
        total = total.defined() ? add(total, per) : per;
    }
    return total;
}

// Uniform 1/C_l per-channel weights shaped for broadcasting.
template <typename T>
std::vector<Tensor<T>> uniform_layer_weights(const LocalFeatureNet<T>& net) {
    std::vector<Tensor<T>> w;
    for (const LocalStage& st : net.stages)
        w.push_back(Tensor<T>::full({1, st.out_ch, 1, 1}, T(1) / static_cast<T>(st.out_ch)));
    return w;
}

// Scalar loss over a batch; the b branch is the detached ground truth.
template <typename T>
Tensor<T> lpips_loss(const Tensor<T>& a, const Tensor<T>& b, const LocalFeatureNet<T>& net) {
    if (a.shape() != b.shape())
        fail(ErrorCode::dimension,
             "lpips_loss: shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> per = lpips_per_sample(net.forward(a), net.forward(b.detach()), uniform_layer_weights(net));
    return mean(per);
}

// Frozen patch-token encoder standing in for a pretrained patch-level
// semantic model: patch embedding to dimension D with a positional table,
// followed by token-mixing stages. With mixing disabled the net is strictly
// patch-local (no positional terms either), which makes it permutation
// equivariant over patches.
template <typename T>
struct GlobalFeatureNet {
    int64_t patch = 4;
    int64_t dim = 32;
    int64_t tokens = 16;  // expected P when mixing is enabled
    bool mixing = true;
    Tensor<T> embed_w, embed_b;
    Tensor<T> pos_emb;  // [tokens, dim]
    std::vector<Tensor<T>> stage_w, stage_b, stage_mix;

    static GlobalFeatureNet make(uint64_t seed, int64_t image_size = 16, int64_t patch = 4, int64_t dim = 32,
                                 int64_t n_stages = 2, bool mixing = true,
                                 RngPurpose purpose = RngPurpose::init_global) {
        GlobalFeatureNet net;
        net.patch = patch;
        net.dim = dim;
        net.mixing = mixing;
        int64_t grid = image_size / patch;
        net.tokens = grid * grid;
        Rng rng = Rng::derive(seed, purpose);
        int64_t in_dim = 3 * patch * patch;
        net.embed_w = Tensor<T>::randn({in_dim, dim}, rng, static_cast<T>(1.0 / std::sqrt(double(in_dim))));
        net.embed_b = Tensor<T>::uniform({dim}, rng, T(-0.1), T(0.1));
        net.pos_emb = Tensor<T>::randn({net.tokens, dim}, rng, T(0.5));
        for (int64_t s = 0; s < n_stages; ++s) {
            net.stage_w.push_back(Tensor<T>::randn({dim, dim}, rng, static_cast<T>(1.0 / std::sqrt(double(dim)))));
            net.stage_b.push_back(Tensor<T>::uniform({dim}, rng, T(-0.1), T(0.1)));
            net.stage_mix.push_back(
                Tensor<T>::randn({net.tokens, net.tokens}, rng, static_cast<T>(0.7 / std::sqrt(double(net.tokens)))));
        }
        return net;
    }

    int64_t n_stages() const { return static_cast<int64_t>(stage_w.size()); }

    // Per-patch features after `layer` stages (layer in [0, n_stages]; -1 = last).
    Tensor<T> forward(const Tensor<T>& img, int64_t layer = -1) const {
        if (layer < 0) layer = n_stages();
        if (layer > n_stages())
            fail(ErrorCode::config, "global_features: layer " + std::to_string(layer) + " exceeds stage count");
        if (img.dim(2) % patch != 0 || img.dim(3) % patch != 0)
            fail(ErrorCode::config, "global_features: image " + shape_str(img.shape()) +
                                        " not divisible by patch size " + std::to_string(patch));
        Tensor<T> tok = patchify(img, patch);  // [B, P, 3*q*q]
        int64_t B = tok.dim(0), P = tok.dim(1);
        Tensor<T> h = linear(tok, embed_w, embed_b);
        if (mixing) {
            if (P != tokens)
                fail(ErrorCode::config, "global_features: built for " + std::to_string(tokens) +
                                            " patches, got " + std::to_string(P));
            h = add(h, reshape(pos_emb, {1, P, dim}));
        }
        for (int64_t s = 0; s < layer; ++s) {
            Tensor<T> u = silu(linear(h, stage_w[static_cast<size_t>(s)], stage_b[static_cast<size_t>(s)]));
            if (mixing) {
                // broadcast the [P,P] mix over the batch
                Tensor<T> flat = permute(u, {1, 0, 2});  // [P, B, D]
                flat = reshape(flat, {P, B * dim});
                Tensor<T> mixed = matmul(stage_mix[static_cast<size_t>(s)], flat);
                u = permute(reshape(mixed, {P, B, dim}), {1, 0, 2});
            }
            h = add(h, u);
        }
        return h;
    }
};

// Per-sample mean over patches of (1 - cos) between two [B,P,D] feature sets.
template <typename T>
Tensor<T> cosine_dissim_per_sample(const Tensor<T>& fa, const Tensor<T>& fb) {
    if (fa.shape() != fb.shape())
        fail(ErrorCode::dimension,
             "cosine loss: shapes disagree: " + shape_str(fa.shape()) + " vs " + shape_str(fb.shape()));
    Tensor<T> dot = sum(mul(fa, fb), {2});
    Tensor<T> na = sqrt(add_scalar(sum(square(fa), {2}), T(1e-24)));
    Tensor<T> nb = sqrt(add_scalar(sum(square(fb), {2}), T(1e-24)));
    Tensor<T> cosv = div(dot, mul(add_scalar(na, T(1e-8)), add_scalar(nb, T(1e-8))));
    return mean(add_scalar(neg(cosv), T(1)), {1});
}

template <typename T>
Tensor<T> pdino_loss(const Tensor<T>& a, const Tensor<T>& b, const GlobalFeatureNet<T>& net,
                     int64_t layer = -1) {
    Tensor<T> fa = net.forward(a, layer);
    Tensor<T> fb = net.forward(b.detach(), layer);
    return mean(cosine_dissim_per_sample(fa, fb));
}

// Alignment of intermediate denoiser tokens with frozen clean-image features;
// gradient flows to `hidden` and the projection only.
template <typename T>
Tensor<T> repa_loss(const Tensor<T>& hidden, const Tensor<T>& x_clean, const Tensor<T>& proj_w,
                    const Tensor<T>& proj_b, const GlobalFeatureNet<T>& net, int64_t layer = -1) {
    Tensor<T> targets = net.forward(x_clean.detach(), layer);
    if (hidden.dim(1) != targets.dim(1))
        fail(ErrorCode::dimension, "repa_loss: patch count mismatch: hidden " + shape_str(hidden.shape()) +
                                       " vs targets " + shape_str(targets.shape()));
    Tensor<T> projected = linear(hidden, proj_w, proj_b);
    return mean(cosine_dissim_per_sample(projected, targets));
}

// 1 if t >= tau (low-noise side owns the boundary), else 0.
template <typename T>
std::vector<int> gate(const std::vector<T>& t, double tau) {
    if (tau < 0.0 || tau > 1.0) fail(ErrorCode::config, "gate: threshold must lie in [0,1]");
    std::vector<int> g(t.size());
    for (size_t i = 0; i < t.size(); ++i) g[i] = static_cast<double>(t[i]) >= tau ? 1 : 0;
    return g;
}

struct PerceptualConfig {
    double lambda1 = 0.1;
    double lambda2 = 0.01;
    double gate_threshold = 0.3;
    double repa_weight = 0.5;
    int64_t global_layer = -1;  // -1 = last stage

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) fail(ErrorCode::config, "perceptual: lambda weights must be >= 0");
        if (gate_threshold < 0 || gate_threshold > 1)
            fail(ErrorCode::config, "perceptual: gate threshold must lie in [0,1]");
        if (repa_weight < 0) fail(ErrorCode::config, "perceptual: repa weight must be >= 0");
    }
};

struct LossBreakdown {
    double total = 0;
    double fm = 0;
    double lpips = 0;  // gated batch mean, before lambda1
    double pdino = 0;  // gated batch mean, before lambda2
    double repa = 0;   // before repa_weight
    double gate_fraction = 0;
};

inline double combine_losses(double fm, double lpips, double pdino, double repa, const PerceptualConfig& cfg) {
    return fm + cfg.lambda1 * lpips + cfg.lambda2 * pdino + cfg.repa_weight * repa;
}

// Full objective. Gating is applied per sample before batch averaging:
// gated-off samples are excluded from the perceptual graphs entirely, so they
// contribute exactly zero loss and zero gradient.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& x_pred, const Tensor<T>& hidden, const DiffusionBatch<T>& batch,
                     const PerceptualConfig& cfg, const LocalFeatureNet<T>& local_net,
                     const GlobalFeatureNet<T>& global_net, const Tensor<T>& proj_w, const Tensor<T>& proj_b,
                     LossBreakdown* out) {
    cfg.validate();
    int64_t B = batch.x.dim(0);
    Tensor<T> total = fm_loss(x_pred, batch);
    double fm_value = static_cast<double>(total.item());

    std::vector<int> gates = gate(batch.t, cfg.gate_threshold);
    std::vector<int64_t> active;
    for (int64_t i = 0; i < B; ++i)
        if (gates[static_cast<size_t>(i)]) active.push_back(i);

    double lpips_value = 0, pdino_value = 0, repa_value = 0;
    if (!active.empty() && (cfg.lambda1 > 0 || cfg.lambda2 > 0)) {
        Tensor<T> xs = index_rows(x_pred, active);
        Tensor<T> refs = index_rows(batch.x, active).detach();
        T inv_b = T(1) / static_cast<T>(B);
        if (cfg.lambda1 > 0) {
            Tensor<T> per = lpips_per_sample(local_net.forward(xs), local_net.forward(refs),
                                             uniform_layer_weights(local_net));
            Tensor<T> term = mul_scalar(sum(per), inv_b);
            lpips_value = static_cast<double>(term.item());
            total = add(total, mul_scalar(term, static_cast<T>(cfg.lambda1)));
        }
        if (cfg.lambda2 > 0) {
            Tensor<T> fa = global_net.forward(xs, cfg.global_layer);
            Tensor<T> fb = global_net.forward(refs, cfg.global_layer);
            Tensor<T> term = mul_scalar(sum(cosine_dissim_per_sample(fa, fb)), inv_b);
            pdino_value = static_cast<double>(term.item());
            total = add(total, mul_scalar(term, static_cast<T>(cfg.lambda2)));
        }
    }
    if (cfg.repa_weight > 0) {
        Tensor<T> term = repa_loss(hidden, batch.x, proj_w, proj_b, global_net, cfg.global_layer);
        repa_value = static_cast<double>(term.item());
        total = add(total, mul_scalar(term, static_cast<T>(cfg.repa_weight)));
    }
    if (out) {
        out->fm = fm_value;
        out->lpips = lpips_value;
        out->pdino = pdino_value;
        out->repa = repa_value;
        out->total = static_cast<double>(total.item());
        out->gate_fraction = static_cast<double>(active.size()) / static_cast<double>(B);
    }
    return total;
}

}  // namespace pixelgen
