#include "core/trainer.hpp"

#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "core/image_io.hpp"

namespace pixelgen {

TrainSetup TrainSetup::from_config(const RunConfig& cfg) {
    TrainSetup s;
    s.model.image_size = cfg.get_i("image_size");
    s.model.patch = cfg.get_i("patch_size");
    s.model.width = cfg.get_i("width");
    s.model.depth = cfg.get_i("depth");
    s.model.heads = cfg.get_i("heads");
    s.model.ffn_hidden = cfg.get_i("ffn_hidden");
    s.model.num_classes = cfg.get_i("num_classes");
    s.model.repa_tap = cfg.get_i("repa_tap");
    s.model.class_drop_prob = cfg.get_f("class_drop_prob");

    s.perceptual.lambda1 = cfg.get_f("lambda1");
    s.perceptual.lambda2 = cfg.get_f("lambda2");
    s.perceptual.gate_threshold = cfg.get_f("gate_threshold");
    s.perceptual.repa_weight = cfg.get_f("repa_weight");
    s.perceptual.global_layer = cfg.get_i("global_layer");

    const std::string& kind = cfg.get("time_sampler");
    if (kind == "logit_normal")
        s.time_sampler.kind = TimeSamplerKind::logit_normal;
    else if (kind == "uniform")
        s.time_sampler.kind = TimeSamplerKind::uniform;
    else
        fail(ErrorCode::config, "config: time_sampler must be logit_normal or uniform, got '" + kind + "'");
    s.time_sampler.mu = cfg.get_f("time_mu");
    s.time_sampler.sigma = cfg.get_f("time_sigma");

    s.data.dataset_seed = cfg.get_u("dataset_seed");
    s.data.image_size = s.model.image_size;
    s.data.epoch_size = cfg.get_i("epoch_size");

    const std::string& solver = cfg.get("solver");
    if (solver == "euler")
        s.sampler.solver = Solver::euler;
    else if (solver == "heun")
        s.sampler.solver = Solver::heun;
    else if (solver == "adams2")
        s.sampler.solver = Solver::adams2;
    else
        fail(ErrorCode::config, "config: solver must be euler, heun, or adams2, got '" + solver + "'");
    s.sampler.steps = cfg.get_i("steps");
    s.sampler.timeshift = cfg.get_f("timeshift");
    s.sampler.timeshift_invert = cfg.get_b("timeshift_invert");
    s.sampler.cfg_scale = cfg.get_f("cfg_scale");
    s.sampler.cfg_lo = cfg.get_f("cfg_interval_lo");
    s.sampler.cfg_hi = cfg.get_f("cfg_interval_hi");
    s.sampler.denom_clip = cfg.get_f("denom_clip");

    s.lr = cfg.get_f("lr");
    s.beta1 = cfg.get_f("beta1");
    s.beta2 = cfg.get_f("beta2");
    s.adam_eps = cfg.get_f("adam_eps");
    s.weight_decay = cfg.get_f("weight_decay");
    s.ema_decay = cfg.get_f("ema_decay");
    s.grad_clip = cfg.get_f("grad_clip");
    s.denom_clip = cfg.get_f("denom_clip");
    s.batch_size = cfg.get_i("batch_size");
    s.train_steps = cfg.get_i("train_steps");
    s.ckpt_every = cfg.get_i("ckpt_every");
    s.sample_every = cfg.get_i("sample_every");
    s.n_sample = cfg.get_i("n_sample");
    s.sample_columns = cfg.get_i("sample_columns");
    s.eval_n = cfg.get_i("eval_n");
    s.eval_k = cfg.get_i("eval_k");
    s.eval_seed = cfg.get_u("eval_seed");
    s.seed = cfg.get_u("seed");
    s.lpips_seed = cfg.get_u("lpips_seed");
    s.global_seed = cfg.get_u("global_seed");
    s.eval_feat_seed = cfg.get_u("eval_feat_seed");
    s.lpips_widths = cfg.get_ilist("lpips_widths");
    s.global_dim = cfg.get_i("global_dim");
    s.global_patch = cfg.get_i("global_patch");
    s.global_stages = cfg.get_i("global_stages");
    s.threads = cfg.get_i("threads");
    s.out_dir = cfg.get("out_dir");
    s.resume = cfg.get("resume");
    s.ckpt = cfg.get("ckpt");
    s.validate();
    return s;
}

void TrainSetup::validate() const {
    model.validate();
    perceptual.validate();
    sampler.validate();
    if (time_sampler.sigma <= 0) fail(ErrorCode::config, "config: time_sigma must be positive");
    if (data.image_size != model.image_size)
        fail(ErrorCode::config, "config: dataset image size must match the model image size");
    if (batch_size < 1) fail(ErrorCode::config, "config: batch_size must be >= 1");
    if (train_steps < 1) fail(ErrorCode::config, "config: train_steps must be >= 1");
    if (denom_clip <= 0) fail(ErrorCode::config, "config: denom_clip must be positive");
    if (grad_clip < 0) fail(ErrorCode::config, "config: grad_clip must be >= 0");
    if (threads < 1) fail(ErrorCode::config, "config: threads must be >= 1");
    if (eval_n < 2 || eval_k < 1 || eval_k >= eval_n)
        fail(ErrorCode::config, "config: need eval_n >= 2 and 1 <= eval_k < eval_n");
    int64_t down = 1;
    for (size_t i = 0; i < lpips_widths.size(); ++i) down *= 2;
    if (model.image_size % down != 0)
        fail(ErrorCode::config, "config: image_size must be divisible by 2^len(lpips_widths)");
    if (model.image_size % global_patch != 0)
        fail(ErrorCode::config, "config: image_size must be divisible by global_patch");
}

namespace {

NamedParams<float> make_trainable(Denoiser<float>& model, Tensor<float>& proj_w, Tensor<float>& proj_b,
                                  const TrainSetup& setup) {
    // separate init stream from the denoiser's
    Rng rng = Rng::derive(setup.seed, RngPurpose::init_model, 1);
    proj_w = Tensor<float>::randn({setup.model.width, setup.global_dim}, rng, 0.02f);
    proj_w.set_requires_grad(true);
    proj_b = Tensor<float>::zeros({setup.global_dim});
    proj_b.set_requires_grad(true);
    NamedParams<float> all = model.params().items();
    all.emplace_back("repa_proj.w", proj_w);
    all.emplace_back("repa_proj.b", proj_b);
    return all;
}

}  // namespace

Trainer::Trainer(const TrainSetup& setup)
    : setup_(setup),
      model_(setup.model, setup.seed),
      trainable_(make_trainable(model_, proj_w_, proj_b_, setup)),
      local_net_(LocalFeatureNet<float>::make_default(setup.lpips_seed, setup.lpips_widths)),
      global_net_(GlobalFeatureNet<float>::make(setup.global_seed, setup.model.image_size, setup.global_patch,
                                                setup.global_dim, setup.global_stages)),
      opt_(trainable_, setup.lr, setup.beta1, setup.beta2, setup.adam_eps, setup.weight_decay),
      ema_(trainable_, setup.ema_decay) {
    setup_.validate();
}

TrainStepResult Trainer::step() {
    const int64_t B = setup_.batch_size;
    Rng time_rng = Rng::derive(setup_.seed, RngPurpose::time_sample, step_);
    Rng noise_rng = Rng::derive(setup_.seed, RngPurpose::noise, step_);
    Rng drop_rng = Rng::derive(setup_.seed, RngPurpose::label_drop, step_);

    Batch data = make_batch(setup_.data, setup_.seed, step_, B);
    std::vector<float> t = sample_time<float>(B, setup_.time_sampler, time_rng);
    Tensor<float> eps = Tensor<float>::randn(data.images.shape(), noise_rng);
    auto batch =
        DiffusionBatch<float>::make(data.images, eps, std::move(t), static_cast<float>(setup_.denom_clip));
    std::vector<int64_t> labels = data.labels;
    for (auto& c : labels)
        if (drop_rng.uniform() < setup_.model.class_drop_prob) c = model_.null_class();

    TrainStepResult result;
    {
        Tape<float> tape;
        DenoiserOutput<float> out = model_.forward(batch.x_t, batch.t, labels);
        Tensor<float> loss = total_loss(out.x_pred, out.hidden, batch, setup_.perceptual, local_net_,
                                        global_net_, proj_w_, proj_b_, &result.loss);
        if (!std::isfinite(result.loss.total)) {
            char msg[256];
            std::snprintf(msg, sizeof(msg),
                          "train_step %" PRIu64
                          ": non-finite loss (total=%g fm=%g lpips=%g pdino=%g repa=%g gate=%.3f)",
                          step_, result.loss.total, result.loss.fm, result.loss.lpips, result.loss.pdino,
                          result.loss.repa, result.loss.gate_fraction);
            fail(ErrorCode::numeric, msg);
        }
        tape.backward(loss);
    }
    result.grad_norm = setup_.grad_clip > 0 ? clip_grad_norm(trainable_, setup_.grad_clip) : 0.0;
    opt_.step();
    for (auto& [name, p] : trainable_) p.zero_grad();
    ema_.update();
    ++step_;
    return result;
}

void Trainer::run() {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(setup_.out_dir, ec);
    if (ec) fail(ErrorCode::io, "train: cannot create output directory " + setup_.out_dir);

    bool resumed = !setup_.resume.empty();
    if (resumed) load_checkpoint(setup_.resume);
    if (step_ >= static_cast<uint64_t>(setup_.train_steps))
        fail(ErrorCode::config, "train: checkpoint step " + std::to_string(step_) +
                                    " already past train_steps " + std::to_string(setup_.train_steps));

    std::string csv_path = setup_.out_dir + "/metrics.csv";
    std::ofstream csv(csv_path, resumed ? std::ios::app : std::ios::trunc);
    if (!csv) fail(ErrorCode::io, "train: cannot open " + csv_path);
    if (!resumed) csv << "step,loss_total,loss_fm,loss_lpips,loss_pdino,loss_repa,grad_norm,gate_fraction\n";

    auto sample_grid = [&](uint64_t at_step) {
        Denoiser<float> ema = ema_model();
        DenoiserPredictor pred(ema);
        std::vector<int64_t> classes(static_cast<size_t>(setup_.n_sample));
        for (size_t i = 0; i < classes.size(); ++i)
            classes[i] = static_cast<int64_t>(i) % setup_.model.num_classes;
        Rng rng = Rng::derive(setup_.seed, RngPurpose::sample_noise, at_step);
        Tensor<float> images =
            sample_images(pred, classes, setup_.sampler, rng, setup_.model.channels, setup_.model.image_size);
        write_image_grid(images, setup_.out_dir + "/samples_" + std::to_string(at_step) + ".ppm",
                         setup_.sample_columns);
    };

    uint64_t last_grid_step = UINT64_MAX;
    while (step_ < static_cast<uint64_t>(setup_.train_steps)) {
        TrainStepResult r = step();
        char buf[320];
        std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", step_ - 1,
                      r.loss.total, r.loss.fm, r.loss.lpips, r.loss.pdino, r.loss.repa, r.grad_norm,
                      r.loss.gate_fraction);
        csv << buf;
        if (setup_.ckpt_every > 0 && step_ % static_cast<uint64_t>(setup_.ckpt_every) == 0 &&
            step_ < static_cast<uint64_t>(setup_.train_steps))
            save_checkpoint(setup_.out_dir + "/ckpt_" + std::to_string(step_) + ".ckpt");
        if (setup_.sample_every > 0 && step_ % static_cast<uint64_t>(setup_.sample_every) == 0) {
            sample_grid(step_);
            last_grid_step = step_;
        }
    }
    csv.flush();
    save_checkpoint(setup_.out_dir + "/final.ckpt");
    save_ema_checkpoint(setup_.out_dir + "/ema.ckpt");
    if (last_grid_step != step_) sample_grid(step_);
}

void Trainer::save_checkpoint(const std::string& path) const {
    CheckpointBlob blob;
    for (const auto& [name, t] : trainable_) blob.put("model." + name, t);
    auto& m = const_cast<AdamW<float>&>(opt_).moments_m();
    auto& v = const_cast<AdamW<float>&>(opt_).moments_v();
    for (size_t i = 0; i < trainable_.size(); ++i) {
        const auto& [name, t] = trainable_[i];
        blob.put<float>("opt.m." + name, t.shape(), m[i].data(), t.numel());
        blob.put<float>("opt.v." + name, t.shape(), v[i].data(), t.numel());
        blob.put<float>("ema." + name, t.shape(), ema_.shadow()[i].data(), t.numel());
    }
    blob.put_scalar("meta.step", static_cast<double>(step_));
    blob.put_scalar("meta.opt_step", static_cast<double>(opt_.step_count()));
    blob.save(path);
}

void Trainer::load_checkpoint(const std::string& path) {
    CheckpointBlob blob = CheckpointBlob::load(path);
    size_t expected = trainable_.size() * 4 + 2;  // model/opt.m/opt.v/ema per param + meta
    if (blob.entries().size() != expected)
        fail(ErrorCode::format, "checkpoint: expected " + std::to_string(expected) + " tensors, found " +
                                    std::to_string(blob.entries().size()) + " in " + path);
    for (size_t i = 0; i < trainable_.size(); ++i) {
        auto& [name, t] = trainable_[i];
        auto pv = blob.get_data<float>("model." + name);
        if (static_cast<int64_t>(pv.size()) != t.numel())
            fail(ErrorCode::format, "checkpoint: size mismatch for model." + name);
        std::copy(pv.begin(), pv.end(), t.data());
        opt_.moments_m()[i] = blob.get_data<float>("opt.m." + name);
        opt_.moments_v()[i] = blob.get_data<float>("opt.v." + name);
        ema_.shadow()[i] = blob.get_data<float>("ema." + name);
    }
    step_ = static_cast<uint64_t>(blob.get_scalar("meta.step"));
    opt_.set_step_count(static_cast<int64_t>(blob.get_scalar("meta.opt_step")));
}

void Trainer::save_ema_checkpoint(const std::string& path) const {
    CheckpointBlob blob;
    for (size_t i = 0; i < trainable_.size(); ++i) {
        const auto& [name, t] = trainable_[i];
        blob.put<float>("model." + name, t.shape(), ema_.shadow()[i].data(), t.numel());
    }
    blob.put_scalar("meta.step", static_cast<double>(step_));
    blob.save(path);
}

Denoiser<float> Trainer::ema_model() const {
    Denoiser<float> m(setup_.model, setup_.seed);
    for (size_t i = 0; i < trainable_.size(); ++i) {
        const std::string& name = trainable_[i].first;
        if (!m.params().has(name)) continue;  // alignment projection is not part of the denoiser
        Tensor<float> t = m.params().get(name);
        const auto& s = ema_.shadow()[i];
        std::copy(s.begin(), s.end(), t.data());
    }
    return m;
}

std::vector<double> pooled_features(const Tensor<float>& images, const GlobalFeatureNet<float>& net,
                                    int64_t layer) {
    Tensor<float> feats = net.forward(images, layer);  // [B,P,D]
    Tensor<float> pooled = mean(feats, {1});           // [B,D]
    std::vector<double> rows(static_cast<size_t>(pooled.numel()));
    for (int64_t i = 0; i < pooled.numel(); ++i) rows[static_cast<size_t>(i)] = pooled.data()[i];
    return rows;
}

MetricsReport evaluate_model(const Denoiser<float>& model, const TrainSetup& setup) {
    GlobalFeatureNet<float> eval_net =
        GlobalFeatureNet<float>::make(setup.eval_feat_seed, setup.model.image_size, setup.global_patch,
                                      setup.global_dim, setup.global_stages, true, RngPurpose::init_eval_feat);
    const int64_t n = setup.eval_n;
    const int64_t d = setup.global_dim;

    std::vector<int64_t> real_idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) real_idx[static_cast<size_t>(i)] = i;
    Batch real = batch_from_indices(setup.data, real_idx);
    std::vector<double> real_feats = pooled_features(real.images, eval_net);

    // per-trajectory results are independent of batch composition, so chunked
    // (and optionally threaded) sampling matches one monolithic call bitwise
    std::vector<int64_t> classes(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) classes[static_cast<size_t>(i)] = i % setup.model.num_classes;
    Rng noise_rng = Rng::derive(setup.eval_seed, RngPurpose::sample_noise, 0);
    Tensor<float> noise = Tensor<float>::randn(
        {n, setup.model.channels, setup.model.image_size, setup.model.image_size}, noise_rng);

    std::vector<double> gen_feats(static_cast<size_t>(n * d));
    const int64_t chunk = std::min<int64_t>(64, n);
    std::vector<std::pair<int64_t, int64_t>> ranges;
    for (int64_t lo = 0; lo < n; lo += chunk) ranges.emplace_back(lo, std::min(n, lo + chunk));
    std::vector<double> grid =
        timeshift_grid(setup.sampler.steps, setup.sampler.timeshift, setup.sampler.timeshift_invert);

    auto run_range = [&](size_t ri) {
        auto [lo, hi] = ranges[ri];
        int64_t m = hi - lo;
        int64_t img_elems = setup.model.channels * setup.model.image_size * setup.model.image_size;
        std::vector<float> chunk_noise(noise.data() + lo * img_elems, noise.data() + hi * img_elems);
        Tensor<float> x = Tensor<float>::from_data(
            {m, setup.model.channels, setup.model.image_size, setup.model.image_size}, std::move(chunk_noise));
        std::vector<int64_t> chunk_classes(classes.begin() + lo, classes.begin() + hi);
        DenoiserPredictor pred(model);
        auto velocity = [&](const Tensor<float>& xt, double t) {
            return velocity_at(pred, xt, t, chunk_classes, setup.sampler);
        };
        Tensor<float> images = clamp_unit(integrate<float>(velocity, std::move(x), grid, setup.sampler.solver));
        std::vector<double> feats = pooled_features(images, eval_net);
        std::copy(feats.begin(), feats.end(), gen_feats.begin() + lo * d);
    };

    if (setup.threads <= 1 || ranges.size() <= 1) {
        for (size_t ri = 0; ri < ranges.size(); ++ri) run_range(ri);
    } else {
        size_t n_workers = std::min<size_t>(static_cast<size_t>(setup.threads), ranges.size());
        std::vector<std::thread> workers;
        std::atomic<size_t> next{0};
        for (size_t w = 0; w < n_workers; ++w)
            workers.emplace_back([&]() {
                for (size_t ri = next.fetch_add(1); ri < ranges.size(); ri = next.fetch_add(1)) run_range(ri);
            });
        for (auto& th : workers) th.join();
    }
    return compute_metrics(real_feats, n, gen_feats, n, d, setup.eval_k);
}

void load_model_params(const std::string& path, const NamedParams<float>& items) {
    CheckpointBlob blob = CheckpointBlob::load(path);
    for (const auto& [name, t] : items) {
        auto pv = blob.get_data<float>("model." + name);
        if (static_cast<int64_t>(pv.size()) != t.numel())
            fail(ErrorCode::format, "checkpoint: size mismatch for model." + name + " in " + path);
        std::copy(pv.begin(), pv.end(), const_cast<Tensor<float>&>(t).data());
    }
}

}  // namespace pixelgen
