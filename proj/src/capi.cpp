#include "pixelgen.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/config.hpp"
#include "core/diagnostics.hpp"
#include "core/image_io.hpp"
#include "core/trainer.hpp"

using namespace pixelgen;

namespace {

thread_local std::string g_last_error;

int code_of(const Error& e) {
    switch (e.code()) {
        case ErrorCode::config:
            return PXG_ERR_CONFIG;
        case ErrorCode::numeric:
            return PXG_ERR_NUMERIC;
        case ErrorCode::io:
        case ErrorCode::format:
            return PXG_ERR_IO;
        default:
            return PXG_ERR_INTERNAL;
    }
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return PXG_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return code_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PXG_ERR_INTERNAL;
    }
}

const RunConfig& as_config(const pxg_config* cfg) { return *reinterpret_cast<const RunConfig*>(cfg); }
RunConfig& as_config(pxg_config* cfg) { return *reinterpret_cast<RunConfig*>(cfg); }

}  // namespace

extern "C" {

pxg_config* pxg_config_new(void) { return reinterpret_cast<pxg_config*>(new RunConfig()); }

void pxg_config_free(pxg_config* cfg) { delete reinterpret_cast<RunConfig*>(cfg); }

int pxg_config_load_file(pxg_config* cfg, const char* path) {
    if (!cfg || !path) {
        g_last_error = "null argument";
        return PXG_ERR_CONFIG;
    }
    return guarded([&] { as_config(cfg).load_file(path); });
}

int pxg_config_set(pxg_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) {
        g_last_error = "null argument";
        return PXG_ERR_CONFIG;
    }
    return guarded([&] { as_config(cfg).set(key, value); });
}

int pxg_config_get(const pxg_config* cfg, const char* key, char* buf, size_t buf_size) {
    if (!cfg || !key || !buf || buf_size == 0) {
        g_last_error = "null argument";
        return PXG_ERR_CONFIG;
    }
    return guarded([&] {
        const std::string& v = as_config(cfg).get(key);
        if (v.size() + 1 > buf_size) fail(ErrorCode::config, "buffer too small for key '" + std::string(key) + "'");
        std::memcpy(buf, v.c_str(), v.size() + 1);
    });
}

int pxg_config_is_set(const pxg_config* cfg, const char* key) {
    if (!cfg || !key) return -PXG_ERR_CONFIG;
    try {
        return as_config(cfg).is_set(key) ? 1 : 0;
    } catch (const Error& e) {
        g_last_error = e.what();
        return -code_of(e);
    }
}

const char* pxg_config_help(void) {
    static std::string help = RunConfig::help();
    return help.c_str();
}

size_t pxg_config_key_count(void) { return RunConfig::registry().size(); }

const char* pxg_config_key_name(size_t index) {
    const auto& reg = RunConfig::registry();
    if (index >= reg.size()) return nullptr;
    return reg[index].key.c_str();
}

int pxg_train(const pxg_config* cfg) {
    if (!cfg) {
        g_last_error = "null config";
        return PXG_ERR_CONFIG;
    }
    return guarded([&] {
        TrainSetup setup = TrainSetup::from_config(as_config(cfg));
        Trainer trainer(setup);
        trainer.run();
    });
}

int pxg_sample(const pxg_config* cfg) {
    if (!cfg) {
        g_last_error = "null config";
        return PXG_ERR_CONFIG;
    }
    return guarded([&] {
        TrainSetup setup = TrainSetup::from_config(as_config(cfg));
        if (setup.ckpt.empty()) fail(ErrorCode::config, "sample: ckpt path is required");
        Denoiser<float> model(setup.model, setup.seed);
        load_model_params(setup.ckpt, model.params().items());
        DenoiserPredictor pred(model);
        std::vector<int64_t> classes(static_cast<size_t>(setup.n_sample));
        for (size_t i = 0; i < classes.size(); ++i)
            classes[i] = static_cast<int64_t>(i) % setup.model.num_classes;
        Rng rng = Rng::derive(setup.seed, RngPurpose::sample_noise, 0);
        Tensor<float> images =
            sample_images(pred, classes, setup.sampler, rng, setup.model.channels, setup.model.image_size);
        std::error_code ec;
        std::filesystem::create_directories(setup.out_dir, ec);
        if (ec) fail(ErrorCode::io, "sample: cannot create output directory " + setup.out_dir);
        write_image_grid(images, setup.out_dir + "/grid.ppm", setup.sample_columns);
    });
}

int pxg_eval(const pxg_config* cfg, pxg_metrics* out) {
    if (!cfg || !out) {
        g_last_error = "null argument";
        return PXG_ERR_CONFIG;
    }
    return guarded([&] {
        TrainSetup setup = TrainSetup::from_config(as_config(cfg));
        if (setup.ckpt.empty()) fail(ErrorCode::config, "eval: ckpt path is required");
        Denoiser<float> model(setup.model, setup.seed);
        load_model_params(setup.ckpt, model.params().items());
        MetricsReport report = evaluate_model(model, setup);
        if (!report.finite()) fail(ErrorCode::numeric, "eval: non-finite metrics");
        out->frechet = report.frechet;
        out->precision = report.precision;
        out->recall = report.recall;
        out->n_real = static_cast<int32_t>(report.n_real);
        out->n_gen = static_cast<int32_t>(report.n_gen);
        out->k = static_cast<int32_t>(report.k);
        std::error_code ec;
        std::filesystem::create_directories(setup.out_dir, ec);
        if (ec) fail(ErrorCode::io, "eval: cannot create output directory " + setup.out_dir);
        std::ofstream csv(setup.out_dir + "/eval.csv");
        if (!csv) fail(ErrorCode::io, "eval: cannot write " + setup.out_dir + "/eval.csv");
        csv << MetricsReport::csv_header() << "\n" << report.csv_row() << "\n";
    });
}

int pxg_check(const pxg_config* cfg) {
    if (!cfg) {
        g_last_error = "null config";
        return PXG_ERR_CONFIG;
    }
    int failures = 0;
    int rc = guarded([&] {
        CheckOptions opts;
        opts.fault_op = as_config(cfg).get("check_fault_op");
        std::string summary;
        for (const CheckResult& r : run_check_suite(opts)) {
            std::printf("[%s] %-32s value=%.3g (threshold %.3g)%s%s\n", r.pass ? "ok" : "FAIL",
                        r.name.c_str(), r.value, r.threshold, r.note.empty() ? "" : " ", r.note.c_str());
            if (!r.pass) {
                ++failures;
                summary += (summary.empty() ? "" : ", ") + r.name;
            }
        }
        if (failures > 0) fail(ErrorCode::numeric, "check: failed: " + summary);
    });
    return rc;
}

const char* pxg_last_error(void) { return g_last_error.c_str(); }

const char* pxg_version(void) { return "pixelgen 1.0.0"; }

}  // extern "C"
