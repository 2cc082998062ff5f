// Regression-layer variants: single regressor (SR), unweighted ensemble (RE),
// softmax-gated (Soft-GRE) and tree-gated (Tree-GRE) ensembles, plus greedy
// top-1 inference that evaluates only the winning regressor.
#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgre/gating.hpp"
#include "tgre/graph.hpp"

namespace tgre {

enum class Variant { SR, RE, SoftGRE, TreeGRE };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::SR: return "sr";
        case Variant::RE: return "re";
        case Variant::SoftGRE: return "soft-gre";
        case Variant::TreeGRE: return "tree-gre";
    }
    return "?";
}

Variant parse_variant(const std::string& name);

// One hidden layer with ReLU, affine output: w1 . max(0, w0 . x + b0) + b1.
template <typename T>
struct WeakRegressorT {
    Tensor<T> w0;  // [feature_dim, hidden]
    Tensor<T> b0;  // [hidden]
    Tensor<T> w1;  // [hidden, out_dim]
    Tensor<T> b1;  // [out_dim]

    int feature_dim() const { return w0.dim(0); }
    int hidden() const { return w0.dim(1); }
    int out_dim() const { return w1.dim(1); }

    // Hidden layer gets the usual uniform fan-in/fan-out init; the output
    // layer starts at zero so an untrained stage predicts a zero
    // displacement and the cascade starts from the mean shape exactly.
    static WeakRegressorT init(int feature_dim, int hidden, int out_dim, Rng& rng) {
        WeakRegressorT r{Tensor<T>({feature_dim, hidden}), Tensor<T>({hidden}),
                         Tensor<T>({hidden, out_dim}), Tensor<T>({out_dim})};
        fill_uniform(r.w0, glorot_limit(feature_dim, hidden), rng);
        return r;
    }

    template <typename U>
    WeakRegressorT<U> cast() const {
        return {w0.template cast<U>(), b0.template cast<U>(), w1.template cast<U>(), b1.template cast<U>()};
    }
};

using WeakRegressor = WeakRegressorT<float>;

// Evaluation counters used to verify how much work greedy inference does.
struct EvalCounters {
    static std::atomic<uint64_t> weak_evals;
    static void reset() { weak_evals = 0; }
};

template <typename T>
std::vector<T> weak_forward(const WeakRegressorT<T>& r, std::span<const T> x) {
    if (static_cast<int>(x.size()) != r.feature_dim())
        throw Error("weak regressor: feature length " + std::to_string(x.size()) + " does not match weights " +
                    shape_str(r.w0.shape));
    EvalCounters::weak_evals.fetch_add(1, std::memory_order_relaxed);
    std::vector<T> h(static_cast<size_t>(r.hidden()));
    kernels::affine(h.data(), x.data(), r.w0.ptr(), r.b0.ptr(), 1, r.feature_dim(), r.hidden());
    kernels::relu(h.data(), h.data(), h.size());
    std::vector<T> y(static_cast<size_t>(r.out_dim()));
    kernels::affine(y.data(), h.data(), r.w1.ptr(), r.b1.ptr(), 1, r.hidden(), r.out_dim());
    return y;
}

// Variant plus everything it owns. SR holds exactly one regressor and no
// gate; RE holds L regressors and no gate; the gated variants add one gate
// whose output length equals L.
template <typename T>
struct RegressionLayerT {
    Variant variant = Variant::SR;
    std::vector<WeakRegressorT<T>> regressors;
    SoftmaxGateT<T> soft_gate;
    TreeGateT<T> tree_gate;

    int experts() const { return static_cast<int>(regressors.size()); }
    int out_dim() const { return regressors.at(0).out_dim(); }
    int feature_dim() const { return regressors.at(0).feature_dim(); }
    bool gated() const { return variant == Variant::SoftGRE || variant == Variant::TreeGRE; }

    void validate() const {
        if (regressors.empty()) throw Error("regression layer: no regressors");
        if (variant == Variant::SR && experts() != 1)
            throw Error("regression layer: sr variant requires exactly 1 regressor, has " + std::to_string(experts()));
        if (variant == Variant::SoftGRE && soft_gate.experts() != experts())
            throw Error("regression layer: softmax gate outputs " + std::to_string(soft_gate.experts()) +
                        " weights for " + std::to_string(experts()) + " regressors");
        if (variant == Variant::TreeGRE && tree_gate.leaves() != experts())
            throw Error("regression layer: tree gate with " + std::to_string(tree_gate.leaves()) +
                        " leaves cannot weight " + std::to_string(experts()) + " regressors");
    }

    template <typename U>
    RegressionLayerT<U> cast() const {
        RegressionLayerT<U> out;
        out.variant = variant;
        for (const auto& r : regressors) out.regressors.push_back(r.template cast<U>());
        if (!soft_gate.empty()) out.soft_gate = soft_gate.template cast<U>();
        if (!tree_gate.empty()) out.tree_gate = tree_gate.template cast<U>();
        return out;
    }
};

using RegressionLayer = RegressionLayerT<float>;

template <typename T>
std::optional<GateVec<T>> gate_forward(const RegressionLayerT<T>& layer, std::span<const T> x) {
    if (layer.variant == Variant::SoftGRE) return softmax_gate(layer.soft_gate, x);
    if (layer.variant == Variant::TreeGRE) return leaf_probabilities(layer.tree_gate, x);
    return std::nullopt;
}

template <typename T>
struct LayerOutput {
    std::vector<T> delta;
    std::optional<GateVec<T>> gate;
};

template <typename T>
LayerOutput<T> layer_forward(const RegressionLayerT<T>& layer, std::span<const T> x) {
    layer.validate();
    LayerOutput<T> out;
    if (layer.variant == Variant::SR) {
        out.delta = weak_forward(layer.regressors[0], x);
        return out;
    }
    const int L = layer.experts();
    const int O = layer.out_dim();
    std::vector<T> stacked(static_cast<size_t>(L) * O);
    for (int l = 0; l < L; ++l) {
        std::vector<T> y = weak_forward(layer.regressors[static_cast<size_t>(l)], x);
        std::copy(y.begin(), y.end(), stacked.begin() + static_cast<size_t>(l) * O);
    }
    GateVec<T> g;
    if (layer.variant == Variant::RE) {
        g.p.assign(static_cast<size_t>(L), static_cast<T>(1.0 / L));
    } else {
        g = *gate_forward(layer, x);
        out.gate = g;
    }
    out.delta.resize(static_cast<size_t>(O));
    kernels::gate_combine(out.delta.data(), g.p.data(), stacked.data(), 1, L, O);
    return out;
}

// Greedy inference: evaluate the gate, then only the argmax regressor, and
// return its raw (unweighted) output. Ties break to the lowest index.
template <typename T>
std::vector<T> top1_forward(const RegressionLayerT<T>& layer, std::span<const T> x, int* chosen = nullptr) {
    layer.validate();
    if (!layer.gated()) throw Error("top1_forward: layer has no gate (variant " + std::string(variant_name(layer.variant)) + ")");
    const GateVec<T> g = *gate_forward(layer, x);
    const int best = g.argmax();
    if (chosen) *chosen = best;
    return weak_forward(layer.regressors[static_cast<size_t>(best)], x);
}

template <typename T>
long long count_parameters(const WeakRegressorT<T>& r) {
    return static_cast<long long>(r.w0.numel() + r.b0.numel() + r.w1.numel() + r.b1.numel());
}

template <typename T>
long long count_parameters(const RegressionLayerT<T>& layer) {
    long long n = 0;
    for (const auto& r : layer.regressors) n += count_parameters(r);
    if (!layer.soft_gate.empty()) n += count_parameters(layer.soft_gate);
    if (!layer.tree_gate.empty()) n += count_parameters(layer.tree_gate);
    return n;
}

// ---- training-graph construction ----

template <typename T>
struct LayerGraph {
    std::vector<int> param_ids;  // leaves, one per parameter tensor, regressors then gate
    int delta = -1;              // [B, out_dim]
    int gate = -1;               // [B, L] or -1 for sr/re
};

// Lowers the regression layer onto feature node `features` ([B, feature_dim]).
template <typename T>
LayerGraph<T> build_layer(Graph<T>& g, const RegressionLayerT<T>& layer, int features) {
    layer.validate();
    LayerGraph<T> out;
    const int B = g.value(features).dim(0);
    std::vector<int> reg_outs;
    for (const auto& r : layer.regressors) {
        int w0 = g.leaf(r.w0, true), b0 = g.leaf(r.b0, true);
        int w1 = g.leaf(r.w1, true), b1 = g.leaf(r.b1, true);
        out.param_ids.insert(out.param_ids.end(), {w0, b0, w1, b1});
        int h = g.relu(g.affine(features, w0, b0));
        reg_outs.push_back(g.affine(h, w1, b1));
    }
    if (layer.variant == Variant::SR) {
        out.delta = reg_outs[0];
        return out;
    }
    int stacked = g.stack(reg_outs);
    int gate_id;
    if (layer.variant == Variant::RE) {
        Tensor<T> uniform({B, layer.experts()});
        uniform.fill(static_cast<T>(1.0 / layer.experts()));
        gate_id = g.leaf(std::move(uniform), false);
    } else if (layer.variant == Variant::SoftGRE) {
        int gw = g.leaf(layer.soft_gate.w, true), gb = g.leaf(layer.soft_gate.b, true);
        out.param_ids.insert(out.param_ids.end(), {gw, gb});
        gate_id = g.softmax(g.affine(features, gw, gb));
        out.gate = gate_id;
    } else {
        int gw = g.leaf(layer.tree_gate.w, true), gb = g.leaf(layer.tree_gate.b, true);
        out.param_ids.insert(out.param_ids.end(), {gw, gb});
        gate_id = g.tree_leaf(g.sigmoid(g.affine(features, gw, gb)), layer.tree_gate.depth);
        out.gate = gate_id;
    }
    out.delta = g.gate_combine(gate_id, stacked);
    return out;
}

}  // namespace tgre
