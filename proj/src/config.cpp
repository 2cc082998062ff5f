#include "tgre/config.hpp"

#include <fstream>

namespace tgre {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int r = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw Error("config: bad integer for '" + key + "': '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw Error("config: bad number for '" + key + "': '" + v + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        uint64_t r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw Error("config: bad unsigned integer for '" + key + "': '" + v + "'");
    }
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos <= v.size()) {
        size_t comma = v.find(',', pos);
        if (comma == std::string::npos) comma = v.size();
        out.push_back(to_int(key, trim(v.substr(pos, comma - pos))));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    auto fail = [](const std::string& msg) { throw Error("config: " + msg); };
    if (train.epochs < 0) fail("epochs must be >= 0");
    if (train.batch < 1) fail("batch must be >= 1");
    if (!(train.adam.lr > 0)) fail("lr must be positive");
    if (train.augment.translate_sigma < 0 || train.augment.scale_sigma < 0) fail("augmentation sigmas must be >= 0");
    if (data.empty()) fail("data must be 'synthetic' or a directory path");
    if (data == "synthetic") {
        if (train_count < 1) fail("train_count must be >= 1");
        if (eval_count < 1) fail("eval_count must be >= 1");
        make_synth_spec(*this).validate();
    }
    if ((norm_a < 0) != (norm_b < 0)) fail("norm_a and norm_b must be set together");
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "variant") cfg.model.variant = parse_variant(value);
    else if (key == "stages") cfg.model.stages = to_int(key, value);
    else if (key == "landmarks") cfg.model.landmarks = to_int(key, value);
    else if (key == "image_size") cfg.model.image_size = to_int(key, value);
    else if (key == "patch_size") cfg.model.patch_size = to_int(key, value);
    else if (key == "conv_channels") cfg.model.conv_channels = to_int_list(key, value);
    else if (key == "conv_kernels") cfg.model.conv_kernels = to_int_list(key, value);
    else if (key == "conv_strides") cfg.model.conv_strides = to_int_list(key, value);
    else if (key == "fc_dim") cfg.model.fc_dim = to_int(key, value);
    else if (key == "ensemble_size") cfg.model.ensemble_size = to_int(key, value);
    else if (key == "hidden") cfg.model.hidden = to_int(key, value);
    else if (key == "tree_depth") cfg.model.tree_depth = to_int(key, value);
    else if (key == "lr") cfg.train.adam.lr = to_double(key, value);
    else if (key == "beta1") cfg.train.adam.beta1 = to_double(key, value);
    else if (key == "beta2") cfg.train.adam.beta2 = to_double(key, value);
    else if (key == "epsilon") cfg.train.adam.epsilon = to_double(key, value);
    else if (key == "epochs") cfg.train.epochs = to_int(key, value);
    else if (key == "batch") cfg.train.batch = to_int(key, value);
    else if (key == "translate_sigma") cfg.train.augment.translate_sigma = static_cast<float>(to_double(key, value));
    else if (key == "scale_sigma") cfg.train.augment.scale_sigma = static_cast<float>(to_double(key, value));
    else if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "data") cfg.data = value;
    else if (key == "train_count") cfg.train_count = to_int(key, value);
    else if (key == "eval_count") cfg.eval_count = to_int(key, value);
    else if (key == "norm_a") cfg.norm_a = to_int(key, value);
    else if (key == "norm_b") cfg.norm_b = to_int(key, value);
    else if (key == "synth_blob_amplitude") cfg.synth_blob_amplitude = static_cast<float>(to_double(key, value));
    else if (key == "synth_blob_sigma") cfg.synth_blob_sigma = static_cast<float>(to_double(key, value));
    else if (key == "synth_jitter_translate") cfg.synth_jitter_translate = static_cast<float>(to_double(key, value));
    else if (key == "synth_jitter_rotate") cfg.synth_jitter_rotate = static_cast<float>(to_double(key, value));
    else if (key == "synth_jitter_scale") cfg.synth_jitter_scale = static_cast<float>(to_double(key, value));
    else if (key == "synth_noise") cfg.synth_noise = static_cast<float>(to_double(key, value));
    else if (key == "synth_occluder_prob") cfg.synth_occluder_prob = static_cast<float>(to_double(key, value));
    else throw Error("config: unknown key '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

SyntheticSpec make_synth_spec(const RunConfig& cfg) {
    SyntheticSpec spec;
    spec.seed = cfg.seed;
    spec.image_size = cfg.model.image_size;
    spec.landmarks = cfg.model.landmarks;
    spec.blob_amplitude = cfg.synth_blob_amplitude;
    spec.blob_sigma = cfg.synth_blob_sigma;
    spec.jitter_translate = cfg.synth_jitter_translate;
    spec.jitter_rotate = cfg.synth_jitter_rotate;
    spec.jitter_scale = cfg.synth_jitter_scale;
    spec.noise_sigma = cfg.synth_noise;
    spec.occluder_prob = cfg.synth_occluder_prob;
    spec.norm_a = cfg.norm_a >= 0 ? cfg.norm_a : 0;
    spec.norm_b = cfg.norm_b >= 0 ? cfg.norm_b : 1;
    return spec;
}

Normalizer make_normalizer(const RunConfig& cfg) {
    Normalizer n;
    n.a = cfg.norm_a;
    n.b = cfg.norm_b;
    if (cfg.data == "synthetic" && n.a < 0) {
        n.a = 0;
        n.b = 1;
    }
    return n;
}

}  // namespace tgre
