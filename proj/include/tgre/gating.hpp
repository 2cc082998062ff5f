// Gating operators for the regressor ensemble: a softmax gate (affine
// projection to L logits, then softmax) and a neural-tree gate (full binary
// tree of per-node routing neurons; leaf probabilities weight the ensemble).
#pragma once

#include <span>
#include <vector>

#include "tgre/kernels.hpp"
#include "tgre/rng.hpp"
#include "tgre/tensor.hpp"

namespace tgre {

// Probability vector over the L regressors; entries in [0,1], summing to 1.
template <typename T>
struct GateVec {
    std::vector<T> p;

    int size() const { return static_cast<int>(p.size()); }

    int argmax() const {  // ties break to the lowest index
        int best = 0;
        for (int i = 1; i < size(); ++i)
            if (p[static_cast<size_t>(i)] > p[static_cast<size_t>(best)]) best = i;
        return best;
    }
};

using GateVector = GateVec<float>;

template <typename T>
struct SoftmaxGateT {
    Tensor<T> w;  // [feature_dim, L]
    Tensor<T> b;  // [L]

    bool empty() const { return w.empty(); }
    int experts() const { return w.empty() ? 0 : w.dim(1); }
    int feature_dim() const { return w.empty() ? 0 : w.dim(0); }

    static SoftmaxGateT init(int feature_dim, int experts, Rng& rng);

    template <typename U>
    SoftmaxGateT<U> cast() const {
        return {w.template cast<U>(), b.template cast<U>()};
    }
};

// Full binary tree of depth D. Node n (breadth-first, children 2n+1 / 2n+2)
// routes left with probability sigmoid(w_n . x + b_n); w is packed with one
// column per node.
template <typename T>
struct TreeGateT {
    int depth = 0;
    Tensor<T> w;  // [feature_dim, 2^depth - 1]
    Tensor<T> b;  // [2^depth - 1]

    bool empty() const { return depth == 0; }
    int nodes() const { return kernels::tree_nodes(depth); }
    int leaves() const { return kernels::tree_leaves(depth); }
    int feature_dim() const { return w.empty() ? 0 : w.dim(0); }

    static TreeGateT init(int feature_dim, int depth, Rng& rng);

    template <typename U>
    TreeGateT<U> cast() const {
        return {depth, w.template cast<U>(), b.template cast<U>()};
    }
};

using SoftmaxGate = SoftmaxGateT<float>;
using NeuralTreeGate = TreeGateT<float>;

// Per-node routing logits for one feature vector: z[n] = w_n . x + b_n.
template <typename T>
std::vector<T> tree_routing_logits(const TreeGateT<T>& gate, std::span<const T> x) {
    if (static_cast<int>(x.size()) != gate.feature_dim())
        throw Error("tree gate: feature length " + std::to_string(x.size()) + " does not match node weights " +
                    shape_str(gate.w.shape));
    std::vector<T> z(static_cast<size_t>(gate.nodes()));
    kernels::affine(z.data(), x.data(), gate.w.ptr(), gate.b.ptr(), 1, gate.feature_dim(), gate.nodes());
    return z;
}

// Probability of routing to the LEFT child of one node.
template <typename T>
T routing_prob(const TreeGateT<T>& gate, int node, std::span<const T> x) {
    if (node < 0 || node >= gate.nodes()) throw Error("tree gate: node " + std::to_string(node) + " out of range");
    if (static_cast<int>(x.size()) != gate.feature_dim())
        throw Error("tree gate: feature length " + std::to_string(x.size()) + " does not match node weights " +
                    shape_str(gate.w.shape));
    double z = static_cast<double>(gate.b[static_cast<size_t>(node)]);
    const int nn = gate.nodes();
    for (int f = 0; f < gate.feature_dim(); ++f)
        z += static_cast<double>(x[static_cast<size_t>(f)]) * static_cast<double>(gate.w[static_cast<size_t>(f) * nn + node]);
    return kernels::serial::sigmoid_one(static_cast<T>(z));
}

// Leaf probabilities mu_0..mu_{2^D-1}: product of routing terms along each
// root-to-leaf path.
template <typename T>
GateVec<T> leaf_probabilities(const TreeGateT<T>& gate, std::span<const T> x) {
    std::vector<T> z = tree_routing_logits(gate, x);
    std::vector<T> d(z.size());
    kernels::sigmoid(d.data(), z.data(), d.size());
    GateVec<T> out;
    out.p.resize(static_cast<size_t>(gate.leaves()));
    kernels::tree_leaf(out.p.data(), d.data(), 1, gate.depth);
    return out;
}

template <typename T>
GateVec<T> softmax_gate(const SoftmaxGateT<T>& gate, std::span<const T> x) {
    if (static_cast<int>(x.size()) != gate.feature_dim())
        throw Error("softmax gate: feature length " + std::to_string(x.size()) + " does not match weights " +
                    shape_str(gate.w.shape));
    GateVec<T> out;
    out.p.resize(static_cast<size_t>(gate.experts()));
    std::vector<T> logits(out.p.size());
    kernels::affine(logits.data(), x.data(), gate.w.ptr(), gate.b.ptr(), 1, gate.feature_dim(), gate.experts());
    kernels::softmax(out.p.data(), logits.data(), 1, gate.experts());
    return out;
}

inline double glorot_limit(int fan_in, int fan_out) {
    return std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
}

template <typename T>
void fill_uniform(Tensor<T>& t, double limit, Rng& rng) {
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
SoftmaxGateT<T> SoftmaxGateT<T>::init(int feature_dim, int experts, Rng& rng) {
    SoftmaxGateT g{Tensor<T>({feature_dim, experts}), Tensor<T>({experts})};
    fill_uniform(g.w, glorot_limit(feature_dim, experts), rng);
    return g;
}

template <typename T>
TreeGateT<T> TreeGateT<T>::init(int feature_dim, int depth, Rng& rng) {
    TreeGateT g{depth, Tensor<T>({feature_dim, kernels::tree_nodes(depth)}), Tensor<T>({kernels::tree_nodes(depth)})};
    fill_uniform(g.w, glorot_limit(feature_dim, 1), rng);  // each node is a single neuron
    return g;
}

template <typename T>
long long count_parameters(const SoftmaxGateT<T>& g) {
    return static_cast<long long>(g.w.numel() + g.b.numel());
}

template <typename T>
long long count_parameters(const TreeGateT<T>& g) {
    return static_cast<long long>(g.w.numel() + g.b.numel());
}

}  // namespace tgre
