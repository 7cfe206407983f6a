#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/gradcheck.hpp"
#include "core/perception.hpp"

using namespace pixelgen;

namespace {

uint64_t checksum(const std::vector<float>& v) {
    uint64_t h = 1469598103934665603ull;
    for (float f : v) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        h = (h ^ bits) * 1099511628211ull;
    }
    return h;
}

}  // namespace

TEST_CASE("local_features: pyramid shapes, determinism, unit channel norms") {
    auto net = LocalFeatureNet<float>::make_default(42);
    Rng rng(1);
    auto img = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    auto feats = net.forward(img);
    REQUIRE(feats.size() == 3);
    CHECK(feats[0].shape() == Shape{2, 8, 8, 8});
    CHECK(feats[1].shape() == Shape{2, 16, 4, 4});
    CHECK(feats[2].shape() == Shape{2, 32, 2, 2});

    auto feats2 = LocalFeatureNet<float>::make_default(42).forward(img);
    for (size_t l = 0; l < 3; ++l) CHECK(feats[l].vec() == feats2[l].vec());

    auto normed = channel_unit_normalize(feats[0]);
    int64_t C = 8, hw = 64;
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t s = 0; s < hw; ++s) {
            double raw = 0, unit = 0;
            for (int64_t c = 0; c < C; ++c) {
                double fv = feats[0].data()[(b * C + c) * hw + s];
                double nv = normed.data()[(b * C + c) * hw + s];
                raw += fv * fv;
                unit += nv * nv;
            }
            if (std::sqrt(raw) > 1e-8) CHECK(std::sqrt(unit) == doctest::Approx(1.0).epsilon(1e-5));
        }
    }

    CHECK_THROWS_AS(net.forward(Tensor<float>::zeros({1, 3, 12, 12})), Error);  // 12 % 8 != 0
}

TEST_CASE("lpips: zero on identical inputs, symmetric in value") {
    auto net = LocalFeatureNet<float>::make_default(42);
    Rng rng(3);
    auto a = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    auto b = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    CHECK(lpips_loss(a, a, net).item() == doctest::Approx(0.0));
    CHECK(lpips_loss(a, b, net).item() == doctest::Approx(lpips_loss(b, a, net).item()).epsilon(1e-6));
    CHECK(lpips_loss(a, b, net).item() >= 0.0f);
    CHECK_THROWS_AS(lpips_loss(a, Tensor<float>::zeros({2, 3, 8, 8}), net), Error);
}

TEST_CASE("lpips: identity passthrough stage reduces to normalized pixel distance") {
    // one 1x1 passthrough stage (identity kernel, no activation), weight 1:
    // normalized (1,0) vs (0,1) on a single pixel has squared distance 2
    LocalFeatureNet<float> net;
    net.stages = {{2, 2, 1, 1, false}};
    net.weights = {Tensor<float>::from_data({2, 2, 1, 1}, {1, 0, 0, 1})};
    net.biases = {Tensor<float>::zeros({2})};
    auto a = Tensor<float>::from_data({1, 2, 1, 1}, {1, 0});
    auto b = Tensor<float>::from_data({1, 2, 1, 1}, {0, 1});
    std::vector<Tensor<float>> w = {Tensor<float>::full({1, 2, 1, 1}, 1.0f)};
    auto per = lpips_per_sample(net.forward(a), net.forward(b), w);
    CHECK(per.item() == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("global_features: patch count, determinism, permutation equivariance") {
    auto net = GlobalFeatureNet<float>::make(21, 16, 4, 32, 2);
    Rng rng(5);
    auto img = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    auto f = net.forward(img);
    CHECK(f.shape() == Shape{2, 16, 32});
    CHECK(f.vec() == GlobalFeatureNet<float>::make(21, 16, 4, 32, 2).forward(img).vec());
    CHECK_THROWS_AS(net.forward(Tensor<float>::zeros({1, 3, 18, 18})), Error);

    // with token mixing disabled the net is patch-local: permuting two input
    // patches permutes the corresponding feature rows
    auto local = GlobalFeatureNet<float>::make(21, 16, 4, 32, 2, false);
    auto base = local.forward(img);
    // swap patch (0,0) and patch (1,1) = token 0 and token 5 content in image space
    auto swapped = img.detach();
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < 4; ++y)
                for (int64_t x = 0; x < 4; ++x) {
                    int64_t i0 = ((b * 3 + c) * 16 + y) * 16 + x;            // patch (0,0)
                    int64_t i5 = ((b * 3 + c) * 16 + 4 + y) * 16 + 4 + x;    // patch (1,1)
                    std::swap(swapped.data()[i0], swapped.data()[i5]);
                }
    auto perm = local.forward(swapped);
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t d = 0; d < 32; ++d) {
            CHECK(perm.data()[(b * 16 + 0) * 32 + d] == base.data()[(b * 16 + 5) * 32 + d]);
            CHECK(perm.data()[(b * 16 + 5) * 32 + d] == base.data()[(b * 16 + 0) * 32 + d]);
            CHECK(perm.data()[(b * 16 + 3) * 32 + d] == base.data()[(b * 16 + 3) * 32 + d]);
        }
    }
}

TEST_CASE("pdino: identical, orthogonal, anti-parallel feature rows") {
    auto a = Tensor<float>::from_data({1, 2, 2}, {1, 0, 0, 2});
    CHECK(cosine_dissim_per_sample(a, a).item() == doctest::Approx(0.0).epsilon(1e-6));

    auto b = Tensor<float>::from_data({1, 2, 2}, {0, 1, 2, 0});  // orthogonal rows
    CHECK(cosine_dissim_per_sample(a, b).item() == doctest::Approx(1.0).epsilon(1e-6));

    auto c = Tensor<float>::from_data({1, 2, 2}, {-1, 0, 0, -2});  // anti-parallel
    CHECK(cosine_dissim_per_sample(a, c).item() == doctest::Approx(2.0).epsilon(1e-6));

    auto net = GlobalFeatureNet<float>::make(77, 16, 4, 32, 2);
    Rng rng(7);
    auto img1 = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    auto img2 = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    double v = pdino_loss(img1, img2, net).item();
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
    CHECK(pdino_loss(img1, img1, net).item() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(pdino_loss(img1, img2, net).item() == doctest::Approx(pdino_loss(img2, img1, net).item()).epsilon(1e-6));
}

TEST_CASE("repa: perfect alignment, bounds, scale invariance") {
    auto net = GlobalFeatureNet<float>::make(31, 16, 4, 32, 2);
    Rng rng(11);
    auto x_clean = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    auto targets = net.forward(x_clean);

    // hidden equal to the targets with an identity projection aligns exactly
    Tensor<float> proj_id = Tensor<float>::zeros({32, 32});
    for (int64_t i = 0; i < 32; ++i) proj_id.data()[i * 32 + i] = 1.0f;
    Tensor<float> zero_b = Tensor<float>::zeros({32});
    CHECK(repa_loss(targets.detach(), x_clean, proj_id, zero_b, net).item() ==
          doctest::Approx(0.0).epsilon(1e-6));

    auto hidden = Tensor<float>::randn({2, 16, 48}, rng);
    auto proj = Tensor<float>::randn({48, 32}, rng, 0.1f);
    double v = repa_loss(hidden, x_clean, proj, zero_b, net).item();
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);

    // scaling the projection output leaves the cosine unchanged
    for (float k : {0.5f, 3.0f}) {
        auto proj_k = mul_scalar(proj, k);
        CHECK(repa_loss(hidden, x_clean, proj_k, zero_b, net).item() == doctest::Approx(v).epsilon(1e-4));
    }

    CHECK_THROWS_AS(repa_loss(Tensor<float>::randn({2, 9, 48}, rng), x_clean, proj, zero_b, net), Error);
}

TEST_CASE("gate: threshold semantics") {
    CHECK(gate<float>({0.29f}, 0.3)[0] == 0);
    CHECK(gate<float>({0.30f}, 0.3)[0] == 1);  // boundary inclusive
    CHECK(gate<float>({0.05f, 0.5f, 0.95f}, 0.0) == std::vector<int>{1, 1, 1});
    CHECK_THROWS_AS(gate<float>({0.5f}, 1.5), Error);
}

TEST_CASE("combine_losses: weighted sum with defaults from the ablation tables") {
    PerceptualConfig cfg;  // lambda1=0.1 lambda2=0.01
    cfg.repa_weight = 1.0;
    CHECK(combine_losses(1.0, 2.0, 3.0, 0.5, cfg) == doctest::Approx(1.73).epsilon(1e-12));
    PerceptualConfig off;
    off.lambda1 = 0;
    off.lambda2 = 0;
    off.repa_weight = 0;
    CHECK(combine_losses(1.0, 2.0, 3.0, 0.5, off) == doctest::Approx(1.0));
}

namespace {

struct TotalLossRig {
    LocalFeatureNet<float> local = LocalFeatureNet<float>::make_default(5, {4, 8});
    GlobalFeatureNet<float> global = GlobalFeatureNet<float>::make(6, 8, 4, 16, 2);
    Tensor<float> proj_w, proj_b;
    Tensor<float> x, eps, hidden;
    TotalLossRig() {
        Rng rng(13);
        proj_w = Tensor<float>::randn({24, 16}, rng, 0.1f);
        proj_w.set_requires_grad(true);
        proj_b = Tensor<float>::zeros({16});
        proj_b.set_requires_grad(true);
        x = Tensor<float>::uniform({4, 3, 8, 8}, rng, -1.0f, 1.0f);
        eps = Tensor<float>::randn({4, 3, 8, 8}, rng);
        hidden = Tensor<float>::randn({4, 4, 24}, rng);
    }
};

}  // namespace

TEST_CASE("total_loss: degenerate weights reduce to the flow-matching term") {
    TotalLossRig rig;
    auto batch = DiffusionBatch<float>::make(rig.x, rig.eps, {0.5f, 0.6f, 0.7f, 0.8f});
    Rng rng(17);
    auto x_pred = Tensor<float>::uniform({4, 3, 8, 8}, rng, -1.0f, 1.0f);
    PerceptualConfig cfg;
    cfg.lambda1 = 0;
    cfg.lambda2 = 0;
    cfg.repa_weight = 0;
    LossBreakdown bd;
    auto total = total_loss(x_pred, rig.hidden, batch, cfg, rig.local, rig.global, rig.proj_w, rig.proj_b, &bd);
    CHECK(total.item() == fm_loss(x_pred, batch).item());
    CHECK(bd.lpips == 0.0);
    CHECK(bd.pdino == 0.0);
    CHECK(bd.repa == 0.0);
}

TEST_CASE("total_loss: breakdown recombination and gate fraction") {
    TotalLossRig rig;
    auto batch = DiffusionBatch<float>::make(rig.x, rig.eps, {0.1f, 0.2f, 0.5f, 0.9f});
    Rng rng(19);
    auto x_pred = Tensor<float>::uniform({4, 3, 8, 8}, rng, -1.0f, 1.0f);
    PerceptualConfig cfg;  // defaults: gate 0.3
    LossBreakdown bd;
    auto total = total_loss(x_pred, rig.hidden, batch, cfg, rig.local, rig.global, rig.proj_w, rig.proj_b, &bd);
    CHECK(bd.gate_fraction == doctest::Approx(0.5));
    CHECK(bd.total ==
          doctest::Approx(combine_losses(bd.fm, bd.lpips, bd.pdino, bd.repa, cfg)).epsilon(1e-6));
    CHECK(total.item() == doctest::Approx(bd.total));
}

TEST_CASE("total_loss: all samples gated off leaves the FM gradient bitwise") {
    TotalLossRig rig;
    auto batch = DiffusionBatch<float>::make(rig.x, rig.eps, {0.05f, 0.1f, 0.2f, 0.29f});  // all below 0.3
    Rng rng(23);
    std::vector<float> pred_data(4 * 3 * 64);
    for (auto& v : pred_data) v = static_cast<float>(rng.uniform(-1, 1));

    PerceptualConfig cfg;  // perceptual weights on, but every sample below the gate
    auto x_pred_a = Tensor<float>::from_data({4, 3, 8, 8}, pred_data);
    x_pred_a.set_requires_grad(true);
    auto hidden_a = rig.hidden.detach();
    hidden_a.set_requires_grad(true);
    LossBreakdown bd;
    {
        Tape<float> tape;
        auto total =
            total_loss(x_pred_a, hidden_a, batch, cfg, rig.local, rig.global, rig.proj_w, rig.proj_b, &bd);
        tape.backward(total);
    }
    CHECK(bd.lpips == 0.0);
    CHECK(bd.pdino == 0.0);
    CHECK(bd.gate_fraction == 0.0);
    CHECK(bd.repa > 0.0);  // alignment is not gated

    PerceptualConfig fm_only;
    fm_only.lambda1 = 0;
    fm_only.lambda2 = 0;
    fm_only.repa_weight = 0;
    auto x_pred_b = Tensor<float>::from_data({4, 3, 8, 8}, pred_data);
    x_pred_b.set_requires_grad(true);
    {
        Tape<float> tape;
        auto total = total_loss(x_pred_b, rig.hidden, batch, fm_only, rig.local, rig.global, rig.proj_w,
                                rig.proj_b, nullptr);
        tape.backward(total);
    }
    CHECK(x_pred_a.grad() == x_pred_b.grad());  // bitwise
}

TEST_CASE("total_loss: gated-off samples receive zero perceptual gradient") {
    TotalLossRig rig;
    auto batch = DiffusionBatch<float>::make(rig.x, rig.eps, {0.1f, 0.8f, 0.2f, 0.9f});
    Rng rng(29);
    std::vector<float> pred_data(4 * 3 * 64);
    for (auto& v : pred_data) v = static_cast<float>(rng.uniform(-1, 1));

    auto grad_with = [&](PerceptualConfig cfg) {
        auto x_pred = Tensor<float>::from_data({4, 3, 8, 8}, pred_data);
        x_pred.set_requires_grad(true);
        Tape<float> tape;
        auto total =
            total_loss(x_pred, rig.hidden, batch, cfg, rig.local, rig.global, rig.proj_w, rig.proj_b, nullptr);
        tape.backward(total);
        return x_pred.grad();
    };
    PerceptualConfig cfg;
    PerceptualConfig fm_only;
    fm_only.lambda1 = 0;
    fm_only.lambda2 = 0;
    fm_only.repa_weight = 0;
    auto full = grad_with(cfg);
    auto fm = grad_with(fm_only);
    int64_t per = 3 * 64;
    // samples 0 and 2 are gated off: their gradient equals the FM-only one bitwise
    for (int64_t s : {0, 2})
        for (int64_t j = 0; j < per; ++j)
            CHECK(full[static_cast<size_t>(s * per + j)] == fm[static_cast<size_t>(s * per + j)]);
    // gated-on samples differ somewhere
    bool differs = false;
    for (int64_t s : {1, 3})
        for (int64_t j = 0; j < per; ++j)
            differs = differs || full[static_cast<size_t>(s * per + j)] != fm[static_cast<size_t>(s * per + j)];
    CHECK(differs);
}

TEST_CASE("perceptual losses: image gradients pass finite differences (64-bit)") {
    Rng rng(31);
    LocalFeatureNet<double> local = LocalFeatureNet<double>::make_default(5, {4, 8});
    GlobalFeatureNet<double> global = GlobalFeatureNet<double>::make(6, 8, 4, 16, 2);
    auto a = Tensor<double>::uniform({2, 3, 8, 8}, rng, -1.0, 1.0);
    auto ref = Tensor<double>::uniform({2, 3, 8, 8}, rng, -1.0, 1.0);
    CHECK(finite_diff_check<double>([&](const Tensor<double>& v) { return lpips_loss(v, ref, local); }, a,
                                    1e-5) < 1e-4);
    CHECK(finite_diff_check<double>([&](const Tensor<double>& v) { return pdino_loss(v, ref, global); }, a,
                                    1e-5) < 1e-4);
}

TEST_CASE("frozen extractors never accumulate gradient and stay bit-identical") {
    auto local = LocalFeatureNet<float>::make_default(42);
    auto global = GlobalFeatureNet<float>::make(43, 16, 4, 32, 2);
    uint64_t local_sum = checksum(local.weights[0].vec());
    uint64_t global_sum = checksum(global.embed_w.vec());

    Rng rng(37);
    auto img = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    img.set_requires_grad(true);
    auto ref = Tensor<float>::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    {
        Tape<float> tape;
        auto loss = add(lpips_loss(img, ref, local), pdino_loss(img, ref, global));
        tape.backward(loss);
    }
    CHECK(img.has_grad());
    for (const auto& w : local.weights) CHECK_FALSE(w.has_grad());
    CHECK_FALSE(global.embed_w.has_grad());
    CHECK(checksum(local.weights[0].vec()) == local_sum);
    CHECK(checksum(global.embed_w.vec()) == global_sum);
}
