#include "tgre/cascade.hpp"

#include <cmath>

namespace tgre {

int ModelConfig::conv_spatial() const {
    int h = patch_size;
    for (int s : conv_strides) h = (h + s - 1) / s;  // "same" padding
    return h;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error("config: " + msg); };
    if (stages < 1) fail("stages must be >= 1");
    if (landmarks < 1) fail("landmarks must be >= 1");
    if (image_size < 4) fail("image_size must be >= 4");
    if (patch_size < 1) fail("patch_size must be >= 1");
    if (conv_channels.empty()) fail("conv_channels must not be empty");
    if (conv_kernels.size() != conv_channels.size() || conv_strides.size() != conv_channels.size())
        fail("conv_channels, conv_kernels and conv_strides must have equal lengths");
    for (size_t i = 0; i < conv_channels.size(); ++i) {
        if (conv_channels[i] < 1) fail("conv_channels[" + std::to_string(i) + "] must be >= 1");
        if (conv_kernels[i] < 1 || conv_kernels[i] % 2 == 0)
            fail("conv_kernels[" + std::to_string(i) + "] must be odd and >= 1");
        if (conv_strides[i] < 1) fail("conv_strides[" + std::to_string(i) + "] must be >= 1");
    }
    if (fc_dim < 1) fail("fc_dim must be >= 1");
    if (hidden < 1) fail("hidden must be >= 1");
    if (variant != Variant::SR && ensemble_size < 1) fail("ensemble_size must be >= 1");
    if (variant == Variant::TreeGRE) {
        if (tree_depth < 1) fail("tree_depth must be >= 1 for tree-gre");
        if (ensemble_size != kernels::tree_leaves(tree_depth))
            fail("ensemble_size must equal 2^tree_depth for tree-gre (got " + std::to_string(ensemble_size) +
                 " vs depth " + std::to_string(tree_depth) + " -> " +
                 std::to_string(kernels::tree_leaves(tree_depth)) + " leaves)");
    }
}

long long count_feature_parameters(const ModelConfig& cfg) {
    long long n = 0;
    int cin = 1;
    for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
        const long long cout = cfg.conv_channels[i];
        const long long k = cfg.conv_kernels[i];
        n += cout * cin * k * k + cout;
        cin = cfg.conv_channels[i];
    }
    n += static_cast<long long>(cfg.concat_dim()) * cfg.fc_dim + cfg.fc_dim;
    return n;
}

long long count_regression_parameters(const ModelConfig& cfg) {
    const long long F = cfg.fc_dim;
    const long long H = cfg.hidden;
    const long long O = cfg.out_dim();
    const long long L = cfg.experts();
    long long n = L * (F * H + H + H * O + O);
    if (cfg.variant == Variant::SoftGRE) n += F * L + L;
    if (cfg.variant == Variant::TreeGRE) n += static_cast<long long>(kernels::tree_nodes(cfg.tree_depth)) * (F + 1);
    return n;
}

long long count_stage_parameters(const ModelConfig& cfg) {
    return count_feature_parameters(cfg) + count_regression_parameters(cfg);
}

long long count_model_parameters(const ModelConfig& cfg) {
    return cfg.stages * count_stage_parameters(cfg);
}

Shape compute_mean_shape(const std::vector<Shape>& shapes) {
    if (shapes.empty()) throw Error("compute_mean_shape: empty shape list");
    const size_t n = shapes[0].xy.size();
    std::vector<double> acc(n, 0.0);
    for (const Shape& s : shapes) {
        if (s.xy.size() != n)
            throw Error("compute_mean_shape: inconsistent landmark counts (" + std::to_string(n / 2) + " vs " +
                        std::to_string(s.xy.size() / 2) + ")");
        for (size_t i = 0; i < n; ++i) acc[i] += s.xy[i];
    }
    Shape mean;
    mean.xy.resize(n);
    for (size_t i = 0; i < n; ++i) mean.xy[i] = static_cast<float>(acc[i] / static_cast<double>(shapes.size()));
    return mean;
}

Tensorf extract_patches(const Tensorf& image, const Shape& shape, int patch_size) {
    if (image.rank() != 2) throw Error("extract_patches: image must be rank 2, got " + shape_str(image.shape));
    const int h = image.dim(0), w = image.dim(1);
    const int P = shape.points();
    const int p = patch_size;
    Tensorf out({P, 1, p, p});
    for (int i = 0; i < P; ++i) {
        const int left = static_cast<int>(std::lround(shape.x(i))) - p / 2;
        const int top = static_cast<int>(std::lround(shape.y(i))) - p / 2;
        float* dst = out.ptr() + static_cast<size_t>(i) * p * p;
        for (int r = 0; r < p; ++r) {
            const int yy = top + r;
            for (int c = 0; c < p; ++c) {
                const int xx = left + c;
                dst[r * p + c] =
                    (yy >= 0 && yy < h && xx >= 0 && xx < w) ? image[static_cast<size_t>(yy) * w + xx] : 0.0f;
            }
        }
    }
    return out;
}

std::vector<float> features_forward(const FeatureExtractor& fe, const ModelConfig& cfg, const Tensorf& patches) {
    Graph<float> g;
    FeatureGraph<float> fg = build_features(g, fe, cfg, patches, false);
    const Tensorf& f = g.value(fg.features);
    return {f.data.begin(), f.data.end()};
}

Shape augment_initial_shape(const Shape& mean_shape, Rng& rng, const AugmentConfig& cfg) {
    const int P = mean_shape.points();
    if (P == 0) throw Error("augment_initial_shape: empty shape");
    const float s = static_cast<float>(rng.normal(1.0, cfg.scale_sigma));
    const float tx = static_cast<float>(rng.normal(0.0, cfg.translate_sigma));
    const float ty = static_cast<float>(rng.normal(0.0, cfg.translate_sigma));
    double cx = 0.0, cy = 0.0;
    for (int i = 0; i < P; ++i) {
        cx += mean_shape.x(i);
        cy += mean_shape.y(i);
    }
    cx /= P;
    cy /= P;
    Shape out(P);
    for (int i = 0; i < P; ++i) {
        out.x(i) = static_cast<float>(cx + s * (mean_shape.x(i) - cx) + tx);
        out.y(i) = static_cast<float>(cy + s * (mean_shape.y(i) - cy) + ty);
    }
    return out;
}

Prediction cascade_predict(const CascadeModel& model, const Tensorf& image, InferMode mode) {
    if (model.mean_shape.points() != model.cfg.landmarks)
        throw Error("cascade_predict: model mean shape has " + std::to_string(model.mean_shape.points()) +
                    " points, config expects " + std::to_string(model.cfg.landmarks));
    Prediction pred;
    pred.trajectory.push_back(model.mean_shape);
    for (const Stage& stage : model.stages) {
        const Shape& cur = pred.trajectory.back();
        Tensorf patches = extract_patches(image, cur, model.cfg.patch_size);
        std::vector<float> feat = features_forward(stage.fe, model.cfg, patches);
        const std::span<const float> x(feat);

        std::vector<float> delta;
        if (mode == InferMode::Top1 && stage.layer.gated()) {
            GateVector gate = *gate_forward(stage.layer, x);
            int chosen = -1;
            delta = top1_forward(stage.layer, x, &chosen);
            pred.gates.push_back(std::move(gate));
            pred.top_index.push_back(chosen);
        } else {
            LayerOutput<float> out = layer_forward(stage.layer, x);
            delta = std::move(out.delta);
            if (out.gate) {
                pred.top_index.push_back(out.gate->argmax());
                pred.gates.push_back(std::move(*out.gate));
            } else {
                pred.gates.emplace_back();
                pred.top_index.push_back(-1);
            }
        }
        Shape next = cur;
        for (size_t i = 0; i < next.xy.size(); ++i) next.xy[i] += delta[i];
        pred.trajectory.push_back(std::move(next));
    }
    return pred;
}

CascadeModel init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    CascadeModel model;
    model.cfg = cfg;
    model.mean_shape = Shape(cfg.landmarks);
    Rng rng(seed);
    for (int k = 0; k < cfg.stages; ++k) {
        Stage stage;
        int cin = 1;
        for (int i = 0; i < cfg.conv_layers(); ++i) {
            const int cout = cfg.conv_channels[static_cast<size_t>(i)];
            const int ks = cfg.conv_kernels[static_cast<size_t>(i)];
            Tensorf w({cout, cin, ks, ks});
            // fan counts follow the conv receptive field
            fill_uniform(w, glorot_limit(cin * ks * ks, cout * ks * ks), rng);
            stage.fe.conv_w.push_back(std::move(w));
            stage.fe.conv_b.emplace_back(std::vector<int>{cout});
            cin = cout;
        }
        stage.fe.fc_w = Tensorf({cfg.concat_dim(), cfg.fc_dim});
        fill_uniform(stage.fe.fc_w, glorot_limit(cfg.concat_dim(), cfg.fc_dim), rng);
        stage.fe.fc_b = Tensorf({cfg.fc_dim});

        stage.layer.variant = cfg.variant;
        for (int l = 0; l < cfg.experts(); ++l)
            stage.layer.regressors.push_back(WeakRegressor::init(cfg.fc_dim, cfg.hidden, cfg.out_dim(), rng));
        if (cfg.variant == Variant::SoftGRE)
            stage.layer.soft_gate = SoftmaxGate::init(cfg.fc_dim, cfg.ensemble_size, rng);
        if (cfg.variant == Variant::TreeGRE)
            stage.layer.tree_gate = NeuralTreeGate::init(cfg.fc_dim, cfg.tree_depth, rng);
        stage.layer.validate();
        model.stages.push_back(std::move(stage));
    }
    return model;
}

}  // namespace tgre
