// pixelgen CLI: train / sample / eval / check over the shared-library C API.
//
//   pixelgen {train|sample|eval|check} [--config FILE] [--key value ...]
//
// Exit codes: 0 success, 2 config/user error, 3 numerical failure.

#include <pixelgen.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

namespace {

void print_usage() {
    std::printf("usage: pixelgen {train|sample|eval|check} [--config FILE] [--key value ...]\n");
    std::printf("       pixelgen --help\n\n");
    std::printf("Any configuration key can be overridden as --key value. Known keys:\n\n%s",
                pxg_config_help());
    std::printf("\nEnvironment: PIXELGEN_SEED is used as the seed when none is set explicitly.\n");
}

int exit_code(int rc) {
    switch (rc) {
        case PXG_OK:
            return 0;
        case PXG_ERR_NUMERIC:
            return 3;
        default:
            return 2;  // config, io, internal -> user-facing error
    }
}

int fail_with(int rc) {
    std::fprintf(stderr, "pixelgen: %s\n", pxg_last_error());
    return exit_code(rc);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        print_usage();
        return 2;
    }
    std::string command = argv[1];
    if (command == "--help" || command == "-h" || command == "help") {
        print_usage();
        return 0;
    }
    if (command != "train" && command != "sample" && command != "eval" && command != "check") {
        std::fprintf(stderr, "pixelgen: unknown command '%s'\n", command.c_str());
        print_usage();
        return 2;
    }

    pxg_config* cfg = pxg_config_new();
    int rc = PXG_OK;

    // --config files first (wherever they appear), then remaining overrides
    // left to right
    std::vector<std::pair<std::string, std::string>> overrides;
    for (int i = 2; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--help" || arg == "-h") {
            print_usage();
            pxg_config_free(cfg);
            return 0;
        }
        if (arg.rfind("--", 0) != 0) {
            std::fprintf(stderr, "pixelgen: expected --key, got '%s'\n", arg.c_str());
            pxg_config_free(cfg);
            return 2;
        }
        if (i + 1 >= argc) {
            std::fprintf(stderr, "pixelgen: missing value for '%s'\n", arg.c_str());
            pxg_config_free(cfg);
            return 2;
        }
        std::string key = arg.substr(2);
        std::string value = argv[++i];
        if (key == "config") {
            rc = pxg_config_load_file(cfg, value.c_str());
            if (rc != PXG_OK) {
                int code = fail_with(rc);
                pxg_config_free(cfg);
                return code;
            }
        } else {
            overrides.emplace_back(key, value);
        }
    }
    for (const auto& [key, value] : overrides) {
        rc = pxg_config_set(cfg, key.c_str(), value.c_str());
        if (rc != PXG_OK) {
            int code = fail_with(rc);
            pxg_config_free(cfg);
            return code;
        }
    }

    if (pxg_config_is_set(cfg, "seed") == 0) {
        const char* env_seed = std::getenv("PIXELGEN_SEED");
        if (env_seed && *env_seed) {
            rc = pxg_config_set(cfg, "seed", env_seed);
            if (rc != PXG_OK) {
                int code = fail_with(rc);
                pxg_config_free(cfg);
                return code;
            }
        }
    }

    if (command == "train") {
        rc = pxg_train(cfg);
        if (rc == PXG_OK) {
            char out_dir[512];
            pxg_config_get(cfg, "out_dir", out_dir, sizeof(out_dir));
            std::printf("training done; artifacts in %s/\n", out_dir);
        }
    } else if (command == "sample") {
        rc = pxg_sample(cfg);
        if (rc == PXG_OK) {
            char out_dir[512];
            pxg_config_get(cfg, "out_dir", out_dir, sizeof(out_dir));
            std::printf("wrote %s/grid.ppm\n", out_dir);
        }
    } else if (command == "eval") {
        pxg_metrics metrics;
        rc = pxg_eval(cfg, &metrics);
        if (rc == PXG_OK) {
            std::printf("frechet   %.6f\nprecision %.4f\nrecall    %.4f\n(n_real=%d, n_gen=%d, k=%d)\n",
                        metrics.frechet, metrics.precision, metrics.recall, metrics.n_real, metrics.n_gen,
                        metrics.k);
        }
    } else {  // check
        rc = pxg_check(cfg);
        std::printf(rc == PXG_OK ? "all checks passed\n" : "checks FAILED\n");
    }

    int code = rc == PXG_OK ? 0 : fail_with(rc);
    pxg_config_free(cfg);
    return code;
}
