// Dataset ingestion and model serialization. Only dependency-free formats:
// binary PGM images, pts landmark text files, and a tagged binary model file
// with a trailing CRC-64. Also hosts the deterministic synthetic blob-face
// generator used by the desk-scale configs.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgre/cascade.hpp"

namespace tgre {

struct Sample {
    Tensorf image;   // [h, w] in [-1, 1]
    Shape shape;     // ground truth, pixel coordinates
    std::string id;
};

// ---- image + landmark files ----

// Temp file + rename, so readers never see partial output.
void write_text_atomic(const std::string& path, const std::string& text);

Tensorf load_pgm(const std::string& path);             // raw values in [0,255]
void save_pgm(const std::string& path, const Tensorf& image);

Shape load_pts(const std::string& path);
void save_pts(const std::string& path, const Shape& shape);  // 6 decimals

Tensorf normalize_image(const Tensorf& raw);     // x -> x/127.5 - 1
Tensorf denormalize_image(const Tensorf& norm);  // inverse, clamped to [0,255]

// Loads <stem>.pgm + <stem>.pts pairs, sorted by stem for determinism.
std::vector<Sample> load_dataset_dir(const std::string& dir);

// ---- synthetic data ----

struct SyntheticSpec {
    uint64_t seed = 1;
    int image_size = 64;
    int landmarks = 5;
    float blob_amplitude = 200.0f;
    float blob_sigma = 2.5f;
    float jitter_translate = 4.0f;   // uniform +-px
    float jitter_rotate = 0.1f;      // uniform +-rad
    float jitter_scale = 0.08f;      // uniform scale in 1 +- this
    float noise_sigma = 8.0f;        // raw pixel units
    float occluder_prob = 0.0f;
    int occluder_min = 8;
    int occluder_max = 20;
    int norm_a = 0;  // landmark pair whose distance normalizes the error
    int norm_b = 1;

    void validate() const;
};

// Canonical landmark layout before jitter. P=5 is a stylized face (eyes,
// nose, mouth corners); other P fall back to an ellipse.
Shape synthetic_template(const SyntheticSpec& spec);

// Pure function of (spec, index).
Sample generate_synthetic(const SyntheticSpec& spec, uint64_t index);

std::vector<Sample> synthetic_dataset(const SyntheticSpec& spec, int count, uint64_t start_index = 0);

// ---- model files ----

// CRC-64/XZ, streamable: pass the previous return value to continue.
uint64_t crc64(const void* data, size_t len, uint64_t crc = 0);

// Layout: "TGRE", u32 version, u32 config length, config key=value lines,
// f32 little-endian payload (mean shape then per-stage tensors in
// for_each_param order), u64 CRC-64 of everything before it. Writes are
// atomic (temp file + rename) and canonical (same model -> same bytes).
inline constexpr uint32_t kModelFileVersion = 1;

void save_model(const CascadeModel& model, const std::string& path);
CascadeModel load_model(const std::string& path);

std::string encode_config(const ModelConfig& cfg);        // canonical key order
ModelConfig decode_config(const std::string& text);

}  // namespace tgre
