#include "core/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "core/errors.hpp"

namespace pixelgen {

const std::vector<ConfigEntry>& RunConfig::registry() {
    // Defaults follow the reference configuration scaled to desk size; every
    // knob can be set in a config file or overridden as --key value.
    static const std::vector<ConfigEntry> entries = {
        {"seed", "1", "master seed for training/sampling streams"},
        {"dataset_seed", "1234", "seed of the procedural dataset (kept fixed across training seeds)"},
        {"out_dir", "out", "output directory for checkpoints, metrics, grids"},
        {"threads", "1", "worker threads for data/eval feature extraction (results identical for any value)"},
        {"train_steps", "2000", "number of optimizer steps"},
        {"batch_size", "32", "training batch size (reference uses 256; toy default 32)"},
        {"lr", "1e-4", "constant AdamW learning rate"},
        {"beta1", "0.9", "AdamW beta1"},
        {"beta2", "0.999", "AdamW beta2"},
        {"adam_eps", "1e-8", "AdamW epsilon"},
        {"weight_decay", "0", "decoupled weight decay"},
        {"ema_decay", "0.9999", "EMA decay for shadow parameters"},
        {"grad_clip", "1.0", "global gradient-norm clip (0 disables)"},
        {"lambda1", "0.1", "weight of the local multi-layer feature loss"},
        {"lambda2", "0.01", "weight of the global patch-cosine loss"},
        {"gate_threshold", "0.3", "noise gate: perceptual losses active only for t >= threshold"},
        {"repa_weight", "0.5", "weight of the intermediate-feature alignment loss"},
        {"time_sampler", "logit_normal", "time sampler kind: logit_normal or uniform"},
        {"time_mu", "-0.8", "logit-normal mu"},
        {"time_sigma", "0.8", "logit-normal sigma"},
        {"denom_clip", "0.05", "floor for (1-t) in velocity conversions"},
        {"image_size", "16", "square image size"},
        {"patch_size", "4", "denoiser patch size"},
        {"width", "64", "denoiser token width"},
        {"depth", "4", "denoiser block count"},
        {"heads", "4", "attention heads"},
        {"ffn_hidden", "128", "SwiGLU inner width"},
        {"num_classes", "8", "class count (null class = num_classes)"},
        {"repa_tap", "2", "block index whose tokens feed the alignment loss"},
        {"class_drop_prob", "0.1", "per-sample label drop probability (enables CFG)"},
        {"lpips_widths", "8,16,32", "channel widths of the frozen local extractor stages"},
        {"lpips_seed", "101", "seed of the frozen local extractor"},
        {"global_seed", "202", "seed of the frozen global extractor used by losses"},
        {"global_dim", "32", "patch feature dimension of the global extractor"},
        {"global_patch", "4", "patch size of the global extractor"},
        {"global_stages", "2", "token-mixing stages of the global extractor"},
        {"global_layer", "-1", "stage index for global features (-1 = last)"},
        {"eval_feat_seed", "303", "seed of the evaluation-only global extractor"},
        {"solver", "euler", "ODE solver: euler, heun, or adams2"},
        {"steps", "50", "sampler step count"},
        {"timeshift", "1.0", "time grid shift (>= 1; 1 = identity)"},
        {"timeshift_invert", "0", "flip the timeshift mapping (comparison knob)"},
        {"cfg_scale", "1.0", "guidance scale (1.0 = off; reference with CFG uses 2.25)"},
        {"cfg_interval_lo", "0.1", "guidance interval lower bound"},
        {"cfg_interval_hi", "0.9", "guidance interval upper bound"},
        {"epoch_size", "8192", "virtual epoch size of the procedural dataset"},
        {"ckpt_every", "500", "checkpoint cadence in steps (0 = only final)"},
        {"sample_every", "500", "sample-grid cadence in steps (0 = only final)"},
        {"n_sample", "16", "images per sample grid"},
        {"sample_columns", "4", "columns per sample grid"},
        {"eval_n", "1024", "images per side for evaluation"},
        {"eval_k", "3", "k for the k-NN precision/recall estimate"},
        {"eval_seed", "12345", "seed of the evaluation sampling stream"},
        {"ckpt", "", "checkpoint path for sample/eval"},
        {"resume", "", "checkpoint path to resume training from"},
        {"check_fault_op", "", "inject a gradient fault into the named op (checker self-test)"},
    };
    return entries;
}

RunConfig::RunConfig() {
    for (const ConfigEntry& e : registry()) {
        values_[e.key] = e.def;
        explicit_[e.key] = false;
    }
}

std::string RunConfig::help() {
    std::ostringstream os;
    for (const ConfigEntry& e : registry()) {
        os << "  " << e.key << " = " << (e.def.empty() ? "\"\"" : e.def) << "\n      " << e.doc << "\n";
    }
    return os.str();
}

namespace {
std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}
}  // namespace

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::config, "config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::config, path + ":" + std::to_string(lineno) + ": expected `key = value`");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!values_.count(key))
            fail(ErrorCode::config, path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        values_[key] = value;
        explicit_[key] = true;
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) fail(ErrorCode::config, "config: unknown key '" + key + "'");
    values_[key] = value;
    explicit_[key] = true;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::config, "config: unknown key '" + key + "'");
    return it->second;
}

bool RunConfig::is_set(const std::string& key) const {
    auto it = explicit_.find(key);
    if (it == explicit_.end()) fail(ErrorCode::config, "config: unknown key '" + key + "'");
    return it->second;
}

double RunConfig::get_f(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        fail(ErrorCode::config, "config: key '" + key + "' expects a number, got '" + v + "'");
    return d;
}

int64_t RunConfig::get_i(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    long long i = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        fail(ErrorCode::config, "config: key '" + key + "' expects an integer, got '" + v + "'");
    return i;
}

uint64_t RunConfig::get_u(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    unsigned long long i = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        fail(ErrorCode::config, "config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    return i;
}

bool RunConfig::get_b(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    fail(ErrorCode::config, "config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int64_t> RunConfig::get_ilist(const std::string& key) const {
    const std::string& v = get(key);
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        char* end = nullptr;
        out.push_back(std::strtoll(part.c_str(), &end, 10));
        if (end == part.c_str() || *end != '\0')
            fail(ErrorCode::config, "config: key '" + key + "' expects a comma-separated integer list");
    }
    if (out.empty()) fail(ErrorCode::config, "config: key '" + key + "' expects a non-empty list");
    return out;
}

}  // namespace pixelgen
