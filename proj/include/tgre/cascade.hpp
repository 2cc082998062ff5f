// Cascaded shape model: mean-shape initialization, shape-indexed patch
// extraction, the shared-kernel feature extractor, and full-cascade
// prediction. Each stage applies the conv stack to every landmark patch with
// shared weights, concatenates, runs one FC layer, and feeds the regression
// layer to get a shape displacement.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tgre/ensemble.hpp"

namespace tgre {

// Ordered 2-D landmarks, interleaved (x0, y0, x1, y1, ...) in pixels.
struct Shape {
    std::vector<float> xy;

    Shape() = default;
    explicit Shape(int points) : xy(static_cast<size_t>(points) * 2, 0.0f) {}
    explicit Shape(std::vector<float> flat) : xy(std::move(flat)) {}

    int points() const { return static_cast<int>(xy.size()) / 2; }
    float x(int i) const { return xy[static_cast<size_t>(i) * 2]; }
    float y(int i) const { return xy[static_cast<size_t>(i) * 2 + 1]; }
    float& x(int i) { return xy[static_cast<size_t>(i) * 2]; }
    float& y(int i) { return xy[static_cast<size_t>(i) * 2 + 1]; }
};

struct ModelConfig {
    Variant variant = Variant::TreeGRE;
    int stages = 2;
    int landmarks = 5;
    int image_size = 64;
    int patch_size = 16;
    std::vector<int> conv_channels = {8, 16, 8};
    std::vector<int> conv_kernels = {3, 3, 1};
    std::vector<int> conv_strides = {2, 2, 1};
    int fc_dim = 128;
    int ensemble_size = 8;  // L; forced to 1 for sr
    int hidden = 16;
    int tree_depth = 3;

    int out_dim() const { return 2 * landmarks; }
    int conv_layers() const { return static_cast<int>(conv_channels.size()); }
    int conv_spatial() const;  // final per-patch map extent
    int concat_dim() const { return landmarks * conv_channels.back() * conv_spatial() * conv_spatial(); }
    int experts() const { return variant == Variant::SR ? 1 : ensemble_size; }

    void validate() const;  // throws naming the offending field
};

long long count_feature_parameters(const ModelConfig& cfg);
long long count_regression_parameters(const ModelConfig& cfg);
long long count_stage_parameters(const ModelConfig& cfg);
long long count_model_parameters(const ModelConfig& cfg);  // all stages

// Conv stack applied per patch (kernels shared across landmarks) + FC layer.
template <typename T>
struct FeatureExtractorT {
    std::vector<Tensor<T>> conv_w;  // [cout, cin, k, k]
    std::vector<Tensor<T>> conv_b;  // [cout]
    Tensor<T> fc_w;                 // [concat_dim, fc_dim]
    Tensor<T> fc_b;                 // [fc_dim]

    template <typename U>
    FeatureExtractorT<U> cast() const {
        FeatureExtractorT<U> out;
        for (const auto& w : conv_w) out.conv_w.push_back(w.template cast<U>());
        for (const auto& b : conv_b) out.conv_b.push_back(b.template cast<U>());
        out.fc_w = fc_w.template cast<U>();
        out.fc_b = fc_b.template cast<U>();
        return out;
    }
};

using FeatureExtractor = FeatureExtractorT<float>;

template <typename T>
struct StageT {
    FeatureExtractorT<T> fe;
    RegressionLayerT<T> layer;

    template <typename U>
    StageT<U> cast() const {
        return {fe.template cast<U>(), layer.template cast<U>()};
    }
};

using Stage = StageT<float>;

struct CascadeModel {
    ModelConfig cfg;
    Shape mean_shape;
    std::vector<Stage> stages;
};

// Visits every learnable tensor of a stage in canonical order: conv kernels
// and biases, FC, regressors, gate. Serialization, Adam states, counting and
// the training graph all rely on this one order.
template <typename T, typename F>
void for_each_param(StageT<T>& s, F&& f) {
    for (size_t i = 0; i < s.fe.conv_w.size(); ++i) {
        f("conv" + std::to_string(i) + ".w", s.fe.conv_w[i]);
        f("conv" + std::to_string(i) + ".b", s.fe.conv_b[i]);
    }
    f("fc.w", s.fe.fc_w);
    f("fc.b", s.fe.fc_b);
    for (size_t l = 0; l < s.layer.regressors.size(); ++l) {
        auto& r = s.layer.regressors[l];
        const std::string p = "reg" + std::to_string(l);
        f(p + ".w0", r.w0);
        f(p + ".b0", r.b0);
        f(p + ".w1", r.w1);
        f(p + ".b1", r.b1);
    }
    if (!s.layer.soft_gate.empty()) {
        f("gate.w", s.layer.soft_gate.w);
        f("gate.b", s.layer.soft_gate.b);
    }
    if (!s.layer.tree_gate.empty()) {
        f("gate.w", s.layer.tree_gate.w);
        f("gate.b", s.layer.tree_gate.b);
    }
}

template <typename T, typename F>
void for_each_param(const StageT<T>& s, F&& f) {
    for_each_param(const_cast<StageT<T>&>(s), [&](const std::string& name, Tensor<T>& t) {
        f(name, const_cast<const Tensor<T>&>(t));
    });
}

// ---- training-graph construction ----

template <typename T>
struct FeatureGraph {
    std::vector<int> param_ids;
    int patches = -1;
    int features = -1;  // [B, fc_dim]
};

// patches: [B*P, 1, p, p]; the conv stack treats B*P as its batch so kernels
// are shared across landmarks, then the reshape to [B, concat_dim]
// concatenates per-patch maps in landmark order.
template <typename T>
FeatureGraph<T> build_features(Graph<T>& g, const FeatureExtractorT<T>& fe, const ModelConfig& cfg,
                               Tensor<T> patches, bool train) {
    FeatureGraph<T> out;
    const int BP = patches.dim(0);
    if (BP % cfg.landmarks != 0)
        throw Error("build_features: patch batch " + std::to_string(BP) + " is not a multiple of " +
                    std::to_string(cfg.landmarks) + " landmarks");
    const int B = BP / cfg.landmarks;
    out.patches = g.leaf(std::move(patches), false);
    int x = out.patches;
    for (int i = 0; i < cfg.conv_layers(); ++i) {
        int k = g.leaf(fe.conv_w[static_cast<size_t>(i)], train);
        int b = g.leaf(fe.conv_b[static_cast<size_t>(i)], train);
        out.param_ids.push_back(k);
        out.param_ids.push_back(b);
        x = g.relu(g.channel_bias(g.conv2d(x, k, cfg.conv_strides[static_cast<size_t>(i)], kernels::Pad::Same), b));
    }
    x = g.reshape(x, {B, cfg.concat_dim()});
    int fw = g.leaf(fe.fc_w, train);
    int fb = g.leaf(fe.fc_b, train);
    out.param_ids.push_back(fw);
    out.param_ids.push_back(fb);
    out.features = g.relu(g.affine(x, fw, fb));
    return out;
}

template <typename T>
struct StageGraph {
    std::vector<int> param_ids;  // same order as for_each_param
    int patches = -1;
    int features = -1;
    int delta = -1;
    int gate = -1;
    int loss = -1;
};

template <typename T>
StageGraph<T> build_stage(Graph<T>& g, const StageT<T>& stage, const ModelConfig& cfg, Tensor<T> patches,
                          const Tensor<T>* target) {
    StageGraph<T> out;
    FeatureGraph<T> fg = build_features(g, stage.fe, cfg, std::move(patches), true);
    LayerGraph<T> lg = build_layer(g, stage.layer, fg.features);
    out.param_ids = fg.param_ids;
    out.param_ids.insert(out.param_ids.end(), lg.param_ids.begin(), lg.param_ids.end());
    out.patches = fg.patches;
    out.features = fg.features;
    out.delta = lg.delta;
    out.gate = lg.gate;
    if (target) {
        int t = g.leaf(*target, false);
        out.loss = g.mean_sq(g.sub(out.delta, t));
    }
    return out;
}

// ---- float-level model operations ----

Shape compute_mean_shape(const std::vector<Shape>& shapes);

// p x p window centered on each rounded landmark; pixels outside the image
// read as zero.
Tensorf extract_patches(const Tensorf& image, const Shape& shape, int patch_size);

std::vector<float> features_forward(const FeatureExtractor& fe, const ModelConfig& cfg, const Tensorf& patches);

struct AugmentConfig {
    float translate_sigma = 10.0f;  // pixels
    float scale_sigma = 0.1f;       // about scale 1
};

// One scale draw about the centroid plus one translation draw for all points.
Shape augment_initial_shape(const Shape& mean_shape, Rng& rng, const AugmentConfig& cfg);

enum class InferMode { Full, Top1 };

struct Prediction {
    std::vector<Shape> trajectory;    // s^0 .. s^K
    std::vector<GateVector> gates;    // per stage; empty vector for ungated variants
    std::vector<int> top_index;       // argmax gate per stage, -1 if ungated
    const Shape& final_shape() const { return trajectory.back(); }
};

Prediction cascade_predict(const CascadeModel& model, const Tensorf& image, InferMode mode = InferMode::Full);

CascadeModel init_model(const ModelConfig& cfg, uint64_t seed);

}  // namespace tgre
