// Run configuration: desk-scale defaults, the line-based config file format
// (key = value, # comments), and flag overrides applied on top.
#pragma once

#include <string>

#include "tgre/evalkit.hpp"
#include "tgre/train.hpp"

namespace tgre {

struct RunConfig {
    ModelConfig model;  // desk-scale defaults
    TrainConfig train;
    uint64_t seed = 1;
    std::string data = "synthetic";  // "synthetic" or a dataset directory
    int train_count = 512;
    int eval_count = 200;
    int norm_a = -1;  // -1: automatic normalizer choice
    int norm_b = -1;

    // synthetic generator knobs (image size, landmarks and seed mirror the
    // fields above when the spec is built)
    float synth_blob_amplitude = 200.0f;
    float synth_blob_sigma = 2.5f;
    float synth_jitter_translate = 4.0f;
    float synth_jitter_rotate = 0.1f;
    float synth_jitter_scale = 0.08f;
    float synth_noise = 8.0f;
    float synth_occluder_prob = 0.0f;

    RunConfig() {
        train.augment.translate_sigma = 3.0f;
        train.augment.scale_sigma = 0.05f;
    }

    void validate() const;
};

// Applies one key/value pair; throws naming the key on unknown keys or
// unparseable values.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_config_file(const std::string& path);

SyntheticSpec make_synth_spec(const RunConfig& cfg);
Normalizer make_normalizer(const RunConfig& cfg);

// Training samples use indices 0..train_count-1; held-out evaluation samples
// start here so the two sets never overlap.
inline constexpr uint64_t kEvalIndexBase = 1000000;

}  // namespace tgre
