#pragma once

// Training loop: sample t and noise, build the interpolated batch, forward,
// combined objective, backward, clip, AdamW, EMA; with CSV logging,
// checkpointing, and deterministic resume (all randomness is derived from
// (seed, purpose, step)).

#include <string>

#include "core/checkpoint.hpp"
#include "core/config.hpp"
#include "core/data.hpp"
#include "core/denoiser.hpp"
#include "core/metrics.hpp"
#include "core/optim.hpp"
#include "core/perception.hpp"
#include "core/samplers.hpp"

namespace pixelgen {

// Typed view of a RunConfig.
struct TrainSetup {
    DenoiserConfig model;
    PerceptualConfig perceptual;
    TimeSamplerConfig time_sampler;
    DataConfig data;
    SamplerConfig sampler;
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, weight_decay = 0.0;
    double ema_decay = 0.9999, grad_clip = 1.0, denom_clip = 0.05;
    int64_t batch_size = 32, train_steps = 2000;
    int64_t ckpt_every = 500, sample_every = 500, n_sample = 16, sample_columns = 4;
    int64_t eval_n = 1024, eval_k = 3;
    uint64_t eval_seed = 12345;
    uint64_t seed = 1, lpips_seed = 101, global_seed = 202, eval_feat_seed = 303;
    std::vector<int64_t> lpips_widths = {8, 16, 32};
    int64_t global_dim = 32, global_patch = 4, global_stages = 2;
    int64_t threads = 1;
    std::string out_dir = "out", resume, ckpt;

    static TrainSetup from_config(const RunConfig& cfg);
    void validate() const;
};

struct TrainStepResult {
    LossBreakdown loss;
    double grad_norm = 0.0;
};

class Trainer {
public:
    explicit Trainer(const TrainSetup& setup);

    TrainStepResult step();  // one optimizer step at the current step index
    void run();              // full loop with metrics.csv, checkpoints, sample grids

    uint64_t current_step() const { return step_; }
    Denoiser<float>& model() { return model_; }
    const NamedParams<float>& trainable() const { return trainable_; }
    const LocalFeatureNet<float>& local_net() const { return local_net_; }
    const GlobalFeatureNet<float>& global_net() const { return global_net_; }
    const TrainSetup& setup() const { return setup_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);
    void save_ema_checkpoint(const std::string& path) const;
    Denoiser<float> ema_model() const;  // fresh denoiser carrying the EMA weights

private:
    TrainSetup setup_;
    Denoiser<float> model_;
    Tensor<float> proj_w_, proj_b_;
    NamedParams<float> trainable_;
    LocalFeatureNet<float> local_net_;
    GlobalFeatureNet<float> global_net_;
    AdamW<float> opt_;
    Ema<float> ema_;
    uint64_t step_ = 0;
};

// x-prediction adapter driving a frozen denoiser.
class DenoiserPredictor : public XPredictor<float> {
public:
    explicit DenoiserPredictor(const Denoiser<float>& model) : model_(model) {}
    Tensor<float> predict_x(const Tensor<float>& x_t, const std::vector<float>& t,
                            const std::vector<int64_t>& classes) override {
        return model_.forward(x_t, t, classes).x_pred;
    }
    int64_t null_class() const override { return model_.null_class(); }

private:
    const Denoiser<float>& model_;
};

// Mean-pooled global features, one row per image (doubles, row-major n x D).
std::vector<double> pooled_features(const Tensor<float>& images, const GlobalFeatureNet<float>& net,
                                    int64_t layer = -1);

// Sample eval_n images with the fixed eval seed, extract features of real and
// generated sets with the evaluation extractor, and compute all metrics.
MetricsReport evaluate_model(const Denoiser<float>& model, const TrainSetup& setup);

// Load "model.*" entries of a checkpoint into the given trainable view.
void load_model_params(const std::string& path, const NamedParams<float>& items);

}  // namespace pixelgen
