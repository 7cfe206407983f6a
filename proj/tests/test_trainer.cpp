#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/trainer.hpp"

using namespace pixelgen;
namespace fs = std::filesystem;

namespace {

NamedParams<float> single_param(float value, Shape shape = {1}) {
    Tensor<float> p = Tensor<float>::full(std::move(shape), value);
    p.set_requires_grad(true);
    return {{"p", p}};
}

TrainSetup tiny_setup(uint64_t seed, const std::string& out_dir) {
    TrainSetup s;
    s.model.image_size = 8;
    s.model.width = 16;
    s.model.depth = 2;
    s.model.heads = 2;
    s.model.ffn_hidden = 32;
    s.model.repa_tap = 1;
    s.data.image_size = 8;
    s.lpips_widths = {4, 8};
    s.global_dim = 16;
    s.batch_size = 8;
    s.train_steps = 10;
    s.seed = seed;
    s.out_dir = out_dir;
    s.ckpt_every = 0;
    s.sample_every = 0;
    s.sampler.steps = 4;
    s.n_sample = 4;
    s.eval_n = 32;
    return s;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("adamw: first-step update with unit gradient is about -lr") {
    auto params = single_param(0.0f);
    AdamW<float> opt(params, 1e-4);
    params[0].second.grad()[0] = 1.0f;
    opt.step();
    CHECK(params[0].second.data()[0] == doctest::Approx(-1e-4).epsilon(1e-4));
}

TEST_CASE("adamw: zero gradient with zero moments leaves the parameter unchanged") {
    auto params = single_param(0.37f);
    AdamW<float> opt(params, 1e-4);
    params[0].second.grad()[0] = 0.0f;
    opt.step();
    CHECK(params[0].second.data()[0] == 0.37f);
}

TEST_CASE("adamw: bitwise deterministic across runs") {
    auto run = [] {
        Rng rng(5);
        Tensor<float> p = Tensor<float>::randn({16}, rng);
        p.set_requires_grad(true);
        NamedParams<float> params = {{"p", p}};
        AdamW<float> opt(params, 1e-3);
        for (int step = 0; step < 100; ++step) {
            for (int64_t i = 0; i < 16; ++i)
                p.grad()[static_cast<size_t>(i)] = static_cast<float>(rng.normal());
            opt.step();
            p.zero_grad();
        }
        return p.vec();
    };
    CHECK(run() == run());
}

TEST_CASE("ema: one-step value, geometric shrink, degenerate decay") {
    auto params = single_param(1.0f);
    {
        NamedParams<float> zero_start = {{"p", Tensor<float>::zeros({1})}};
        Ema<float> ema(zero_start, 0.9999);
        // shadow starts at 0; track a parameter fixed at 1
        zero_start[0].second.data()[0] = 1.0f;
        ema.update();
        CHECK(ema.shadow()[0][0] == doctest::Approx(1e-4).epsilon(1e-4));
    }
    {
        Ema<float> ema(single_param(0.0f), 0.5);
        auto& params2 = const_cast<NamedParams<float>&>(ema.params());
        params2[0].second.data()[0] = 1.0f;
        double err_prev = 1.0;
        for (int k = 0; k < 5; ++k) {
            ema.update();
            double err = std::abs(ema.shadow()[0][0] - 1.0);
            CHECK(err == doctest::Approx(err_prev * 0.5).epsilon(1e-6));
            err_prev = err;
        }
    }
    {
        Ema<float> ema(single_param(0.0f), 0.0);
        auto& params3 = const_cast<NamedParams<float>&>(ema.params());
        params3[0].second.data()[0] = 0.625f;
        ema.update();
        CHECK(ema.shadow()[0][0] == 0.625f);
    }
    CHECK_THROWS_AS(Ema<float>(single_param(0.0f), 1.0), Error);
}

TEST_CASE("clip_grad_norm: proportional scaling, no-op below threshold") {
    auto params = single_param(0.0f, {2});
    params[0].second.grad() = {1.2f, 1.6f};  // norm 2.0
    double norm = clip_grad_norm(params, 1.0);
    CHECK(norm == doctest::Approx(2.0));
    CHECK(params[0].second.grad()[0] == doctest::Approx(0.6f));
    CHECK(params[0].second.grad()[1] == doctest::Approx(0.8f));

    params[0].second.grad() = {0.3f, 0.4f};  // norm 0.5
    norm = clip_grad_norm(params, 1.0);
    CHECK(norm == doctest::Approx(0.5));
    CHECK(params[0].second.grad()[0] == 0.3f);

    params[0].second.grad() = {3.0f, 4.0f};
    clip_grad_norm(params, 1.0);
    double post = std::sqrt(params[0].second.grad()[0] * params[0].second.grad()[0] +
                            params[0].second.grad()[1] * params[0].second.grad()[1]);
    CHECK(post == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("train_step: lambda weights off reduces the loss to FM + alignment") {
    TrainSetup s = tiny_setup(7, "/tmp/pxg_t1");
    s.perceptual.lambda1 = 0;
    s.perceptual.lambda2 = 0;
    s.perceptual.repa_weight = 0;
    Trainer trainer(s);
    auto r = trainer.step();
    CHECK(r.loss.total == doctest::Approx(r.loss.fm));
    CHECK(r.loss.lpips == 0.0);
    CHECK(r.loss.pdino == 0.0);
    CHECK(r.loss.repa == 0.0);
}

TEST_CASE("train_step: two fresh runs produce identical 50-step loss sequences") {
    auto losses = [](uint64_t seed) {
        TrainSetup s = tiny_setup(seed, "/tmp/pxg_t2");
        Trainer trainer(s);
        std::vector<double> out;
        for (int i = 0; i < 50; ++i) out.push_back(trainer.step().loss.total);
        return out;
    };
    CHECK(losses(3) == losses(3));
    CHECK(losses(3) != losses(4));
}

TEST_CASE("train_step: loss decreases over 200 steps (majority of 3 seeds)") {
    int improved = 0;
    for (uint64_t seed : {11ull, 12ull, 13ull}) {
        TrainSetup s = tiny_setup(seed, "/tmp/pxg_t3");
        Trainer trainer(s);
        double first10 = 0, last10 = 0;
        for (int i = 0; i < 200; ++i) {
            double v = trainer.step().loss.total;
            if (i < 10) first10 += v;
            if (i >= 190) last10 += v;
        }
        if (last10 < first10) ++improved;
    }
    CHECK(improved >= 2);
}

TEST_CASE("checkpoint blob: round trip bitwise, bad magic/version/truncation rejected") {
    Rng rng(9);
    CheckpointBlob blob;
    auto t1 = Tensor<float>::randn({4, 5}, rng);
    auto t2 = Tensor<double>::randn({3}, rng);
    blob.put("w1", t1);
    blob.put("w2", t2);
    blob.put_scalar("meta.step", 42.0);
    std::string path = "/tmp/pxg_blob.ckpt";
    blob.save(path);

    auto back = CheckpointBlob::load(path);
    CHECK(back.get_data<float>("w1") == t1.vec());
    CHECK(back.get_data<double>("w2") == t2.vec());
    CHECK(back.get_scalar("meta.step") == 42.0);
    CHECK(back.entries().size() == 3);

    std::string raw = read_file(path);
    {
        std::string bad = raw;
        bad[0] = 'X';
        std::ofstream(path + ".bad", std::ios::binary) << bad;
        CHECK_THROWS_AS(CheckpointBlob::load(path + ".bad"), Error);
    }
    {
        std::string bad = raw;
        bad[4] = 9;  // version
        std::ofstream(path + ".ver", std::ios::binary) << bad;
        CHECK_THROWS_AS(CheckpointBlob::load(path + ".ver"), Error);
    }
    {
        std::string bad = raw.substr(0, raw.size() - 7);
        std::ofstream(path + ".trunc", std::ios::binary) << bad;
        try {
            CheckpointBlob::load(path + ".trunc");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::format);
            CHECK(std::string(e.what()).find("offset") != std::string::npos);
        }
    }
    {
        std::string bad = raw + "zz";
        std::ofstream(path + ".trail", std::ios::binary) << bad;
        CHECK_THROWS_AS(CheckpointBlob::load(path + ".trail"), Error);
    }
}

TEST_CASE("trainer checkpoint: save/load round trip restores training state bitwise") {
    TrainSetup s = tiny_setup(21, "/tmp/pxg_t4");
    Trainer a(s);
    for (int i = 0; i < 5; ++i) a.step();
    fs::create_directories(s.out_dir);
    a.save_checkpoint(s.out_dir + "/state.ckpt");

    Trainer b(s);
    b.load_checkpoint(s.out_dir + "/state.ckpt");
    CHECK(b.current_step() == 5);
    for (size_t i = 0; i < a.trainable().size(); ++i)
        CHECK(a.trainable()[i].second.vec() == b.trainable()[i].second.vec());

    // truncated trainer checkpoint is rejected without partial application
    std::string raw = read_file(s.out_dir + "/state.ckpt");
    std::ofstream(s.out_dir + "/trunc.ckpt", std::ios::binary) << raw.substr(0, raw.size() / 2);
    Trainer c(s);
    auto before = c.trainable()[0].second.vec();
    CHECK_THROWS_AS(c.load_checkpoint(s.out_dir + "/trunc.ckpt"), Error);
    CHECK(c.trainable()[0].second.vec() == before);
}

TEST_CASE("resume: 5+5 steps equals 10 uninterrupted steps parameter-for-parameter") {
    TrainSetup s = tiny_setup(31, "/tmp/pxg_t5");
    fs::remove_all(s.out_dir);

    Trainer full(s);
    for (int i = 0; i < 10; ++i) full.step();

    Trainer half(s);
    for (int i = 0; i < 5; ++i) half.step();
    fs::create_directories(s.out_dir);
    half.save_checkpoint(s.out_dir + "/mid.ckpt");

    Trainer resumed(s);
    resumed.load_checkpoint(s.out_dir + "/mid.ckpt");
    for (int i = 0; i < 5; ++i) resumed.step();

    for (size_t i = 0; i < full.trainable().size(); ++i)
        CHECK(full.trainable()[i].second.vec() == resumed.trainable()[i].second.vec());
}

TEST_CASE("run(): emits metrics.csv with the documented header and all artifacts") {
    TrainSetup s = tiny_setup(41, "/tmp/pxg_t6");
    s.train_steps = 6;
    s.ckpt_every = 3;
    s.sample_every = 3;
    fs::remove_all(s.out_dir);
    Trainer trainer(s);
    trainer.run();

    std::string csv = read_file(s.out_dir + "/metrics.csv");
    CHECK(csv.rfind("step,loss_total,loss_fm,loss_lpips,loss_pdino,loss_repa,grad_norm,gate_fraction\n", 0) ==
          0);
    int lines = 0;
    for (char ch : csv)
        if (ch == '\n') ++lines;
    CHECK(lines == 7);  // header + 6 steps
    CHECK(fs::exists(s.out_dir + "/final.ckpt"));
    CHECK(fs::exists(s.out_dir + "/ema.ckpt"));
    CHECK(fs::exists(s.out_dir + "/ckpt_3.ckpt"));
    CHECK(fs::exists(s.out_dir + "/samples_3.ppm"));
    CHECK(fs::exists(s.out_dir + "/samples_6.ppm"));

    // rerun with the same seed: metrics.csv is bitwise identical
    TrainSetup s2 = s;
    s2.out_dir = "/tmp/pxg_t6b";
    fs::remove_all(s2.out_dir);
    Trainer trainer2(s2);
    trainer2.run();
    CHECK(read_file(s2.out_dir + "/metrics.csv") == csv);
}

TEST_CASE("ema model differs from the training model and is usable for sampling") {
    TrainSetup s = tiny_setup(51, "/tmp/pxg_t7");
    Trainer trainer(s);
    for (int i = 0; i < 5; ++i) trainer.step();
    Denoiser<float> ema = trainer.ema_model();
    // EMA lags the trained weights after a few steps
    bool differs = false;
    for (const auto& [name, t] : trainer.model().params().items())
        if (t.vec() != ema.params().get(name).vec()) differs = true;
    CHECK(differs);
}

TEST_CASE("extractor weights round-trip through the checkpoint format") {
    auto net = LocalFeatureNet<float>::make_default(404, {4, 8});
    CheckpointBlob blob;
    for (size_t l = 0; l < net.weights.size(); ++l) {
        blob.put("lpips.stage" + std::to_string(l) + ".w", net.weights[l]);
        blob.put("lpips.stage" + std::to_string(l) + ".b", net.biases[l]);
    }
    blob.save("/tmp/pxg_extractor.ckpt");

    auto net2 = LocalFeatureNet<float>::make_default(999, {4, 8});  // different seed
    auto back = CheckpointBlob::load("/tmp/pxg_extractor.ckpt");
    for (size_t l = 0; l < net2.weights.size(); ++l) {
        auto wv = back.get_data<float>("lpips.stage" + std::to_string(l) + ".w");
        auto bv = back.get_data<float>("lpips.stage" + std::to_string(l) + ".b");
        std::copy(wv.begin(), wv.end(), net2.weights[l].data());
        std::copy(bv.begin(), bv.end(), net2.biases[l].data());
    }
    Rng rng(1);
    auto img = Tensor<float>::uniform({1, 3, 8, 8}, rng, -1.0f, 1.0f);
    auto fa = net.forward(img);
    auto fb = net2.forward(img);
    for (size_t l = 0; l < fa.size(); ++l) CHECK(fa[l].vec() == fb[l].vec());
}
