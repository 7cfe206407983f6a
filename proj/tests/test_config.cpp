#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/trainer.hpp"

using namespace pixelgen;

TEST_CASE("defaults mirror the documented values") {
    RunConfig cfg;
    CHECK(cfg.get("lambda1") == "0.1");
    CHECK(cfg.get("lambda2") == "0.01");
    CHECK(cfg.get("gate_threshold") == "0.3");
    CHECK(cfg.get("time_mu") == "-0.8");
    CHECK(cfg.get("time_sigma") == "0.8");
    CHECK(cfg.get("denom_clip") == "0.05");
    CHECK(cfg.get("ema_decay") == "0.9999");
    CHECK(cfg.get("beta1") == "0.9");
    CHECK(cfg.get("beta2") == "0.999");
    CHECK(cfg.get("lr") == "1e-4");
    CHECK(cfg.get("cfg_interval_lo") == "0.1");
    CHECK(cfg.get("cfg_interval_hi") == "0.9");
    CHECK(cfg.get("steps") == "50");
    CHECK(cfg.get("solver") == "euler");
    CHECK_FALSE(cfg.is_set("lambda1"));
}

TEST_CASE("file parsing: comments, whitespace, unknown key with line number") {
    std::string path = "/tmp/pxg_cfg_test.cfg";
    {
        std::ofstream out(path);
        out << "# a comment\n";
        out << "\n";
        out << "lambda1 = 0.5   # trailing comment\n";
        out << "  solver=heun\n";
    }
    RunConfig cfg;
    cfg.load_file(path);
    CHECK(cfg.get("lambda1") == "0.5");
    CHECK(cfg.get("solver") == "heun");
    CHECK(cfg.is_set("lambda1"));
    CHECK_FALSE(cfg.is_set("lambda2"));

    {
        std::ofstream out(path);
        out << "lambda1 = 0.5\n";
        out << "bogus_key = 1\n";
    }
    RunConfig cfg2;
    try {
        cfg2.load_file(path);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << "no equals sign here\n";
    }
    RunConfig cfg3;
    CHECK_THROWS_AS(cfg3.load_file(path), Error);
    CHECK_THROWS_AS(cfg3.load_file("/tmp/does_not_exist.cfg"), Error);
}

TEST_CASE("set/get: unknown keys rejected, typed getters validate") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("nope", "1"), Error);
    CHECK_THROWS_AS(cfg.get("nope"), Error);
    cfg.set("lambda1", "abc");
    CHECK_THROWS_AS(cfg.get_f("lambda1"), Error);
    cfg.set("train_steps", "12.5");
    CHECK_THROWS_AS(cfg.get_i("train_steps"), Error);
    cfg.set("timeshift_invert", "maybe");
    CHECK_THROWS_AS(cfg.get_b("timeshift_invert"), Error);
    cfg.set("lpips_widths", "8,x");
    CHECK_THROWS_AS(cfg.get_ilist("lpips_widths"), Error);

    cfg.set("lambda1", "0.25");
    CHECK(cfg.get_f("lambda1") == 0.25);
    cfg.set("lpips_widths", "4, 8 ,16");
    CHECK(cfg.get_ilist("lpips_widths") == std::vector<int64_t>{4, 8, 16});
}

TEST_CASE("every registered key round-trips through file parse and override") {
    std::string path = "/tmp/pxg_cfg_roundtrip.cfg";
    {
        std::ofstream out(path);
        for (const ConfigEntry& e : RunConfig::registry())
            out << e.key << " = " << (e.def.empty() ? "x" : e.def) << "\n";
    }
    RunConfig from_file;
    from_file.load_file(path);
    RunConfig from_set;
    for (const ConfigEntry& e : RunConfig::registry()) {
        from_set.set(e.key, e.def.empty() ? "x" : e.def);
        CHECK(from_file.is_set(e.key));
        CHECK(from_file.get(e.key) == (e.def.empty() ? "x" : e.def));
    }
    // help mentions every key
    std::string help = RunConfig::help();
    for (const ConfigEntry& e : RunConfig::registry()) CHECK(help.find(e.key) != std::string::npos);
}

TEST_CASE("TrainSetup::from_config: typed assembly and validation failures") {
    RunConfig cfg;
    TrainSetup s = TrainSetup::from_config(cfg);
    CHECK(s.model.width == 64);
    CHECK(s.perceptual.lambda1 == 0.1);
    CHECK(s.sampler.steps == 50);
    CHECK(s.time_sampler.kind == TimeSamplerKind::logit_normal);

    cfg.set("solver", "rk4");
    CHECK_THROWS_AS(TrainSetup::from_config(cfg), Error);
    cfg.set("solver", "heun");
    cfg.set("time_sigma", "-1");
    CHECK_THROWS_AS(TrainSetup::from_config(cfg), Error);
    cfg.set("time_sigma", "0.8");
    cfg.set("gate_threshold", "1.5");
    CHECK_THROWS_AS(TrainSetup::from_config(cfg), Error);
    cfg.set("gate_threshold", "0.3");
    cfg.set("image_size", "20");  // not divisible by 2^3 for the feature pyramid
    CHECK_THROWS_AS(TrainSetup::from_config(cfg), Error);
}
