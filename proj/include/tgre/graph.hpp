// Define-by-run reverse-mode differentiation over tensor ops. Building an op
// runs its forward kernel immediately and records the node; backward() walks
// the trace in reverse, accumulating exact gradients into every node that a
// grad-requiring leaf can reach. Gradients of leaves the loss never touched
// stay zero.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "tgre/kernels.hpp"
#include "tgre/tensor.hpp"

namespace tgre {

enum class Op {
    Leaf,
    Affine,
    Conv2d,
    ChannelBias,
    Relu,
    Sigmoid,
    Softmax,
    Reshape,
    TreeLeaf,
    Stack,
    GateCombine,
    Sub,
    MeanSq,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Affine: return "affine";
        case Op::Conv2d: return "conv2d";
        case Op::ChannelBias: return "channel_bias";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softmax: return "softmax";
        case Op::Reshape: return "reshape";
        case Op::TreeLeaf: return "tree_leaf";
        case Op::Stack: return "stack";
        case Op::GateCombine: return "gate_combine";
        case Op::Sub: return "sub";
        case Op::MeanSq: return "mean_sq";
    }
    return "?";
}

template <typename T>
class Graph {
  public:
    int leaf(Tensor<T> v, bool needs_grad = false) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(v);
        n.needs = needs_grad;
        return push(std::move(n));
    }

    // x[B,In] * w[In,Out] + b[Out]
    int affine(int x, int w, int b) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        const Tensor<T>& bv = val(b);
        if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0))
            throw Error("affine: incompatible shapes x" + shape_str(xv.shape) + " w" + shape_str(wv.shape) +
                        " b" + shape_str(bv.shape));
        Node n = make(Op::Affine, {x, w, b});
        n.val = Tensor<T>({xv.dim(0), wv.dim(1)});
        kernels::affine(n.val.ptr(), xv.ptr(), wv.ptr(), bv.ptr(), xv.dim(0), xv.dim(1), wv.dim(1));
        return push(std::move(n));
    }

    int conv2d(int x, int k, int stride, kernels::Pad pad) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& kv = val(k);
        if (xv.rank() != 4 || kv.rank() != 4)
            throw Error("conv2d: expected 4-d input and kernel, got " + shape_str(xv.shape) + " and " + shape_str(kv.shape));
        if (xv.dim(1) != kv.dim(1))
            throw Error("conv2d: channel mismatch, input " + shape_str(xv.shape) + " vs kernel " + shape_str(kv.shape));
        if (kv.dim(2) % 2 == 0 || kv.dim(3) % 2 == 0)
            throw Error("conv2d: kernel extents must be odd, got " + shape_str(kv.shape));
        if (stride < 1) throw Error("conv2d: stride must be >= 1, got " + std::to_string(stride));
        auto cd = kernels::conv_out(xv.dim(2), xv.dim(3), kv.dim(2), kv.dim(3), stride, pad);
        Node n = make(Op::Conv2d, {x, k});
        n.stride = stride;
        n.pt = cd.pad_top;
        n.pl = cd.pad_left;
        n.val = Tensor<T>({xv.dim(0), kv.dim(0), cd.ho, cd.wo});
        kernels::conv2d(n.val.ptr(), xv.ptr(), kv.ptr(), xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                        kv.dim(0), kv.dim(2), kv.dim(3), stride, cd.pad_top, cd.pad_left, cd.ho, cd.wo);
        return push(std::move(n));
    }

    int channel_bias(int x, int b) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& bv = val(b);
        if (xv.rank() != 4 || bv.rank() != 1 || xv.dim(1) != bv.dim(0))
            throw Error("channel_bias: input " + shape_str(xv.shape) + " vs bias " + shape_str(bv.shape));
        Node n = make(Op::ChannelBias, {x, b});
        n.val = Tensor<T>(xv.shape);
        kernels::channel_bias(n.val.ptr(), xv.ptr(), bv.ptr(), xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3));
        return push(std::move(n));
    }

    int relu(int x) {
        Node n = make(Op::Relu, {x});
        n.val = Tensor<T>(val(x).shape);
        kernels::relu(n.val.ptr(), val(x).ptr(), n.val.numel());
        return push(std::move(n));
    }

    int sigmoid(int x) {
        Node n = make(Op::Sigmoid, {x});
        n.val = Tensor<T>(val(x).shape);
        kernels::sigmoid(n.val.ptr(), val(x).ptr(), n.val.numel());
        return push(std::move(n));
    }

    // Normalizes over the last axis.
    int softmax(int x) {
        const Tensor<T>& xv = val(x);
        if (xv.rank() < 1) throw Error("softmax: scalar input");
        const int cols = xv.dim(xv.rank() - 1);
        const int rows = static_cast<int>(xv.numel()) / cols;
        Node n = make(Op::Softmax, {x});
        n.val = Tensor<T>(xv.shape);
        kernels::softmax(n.val.ptr(), xv.ptr(), rows, cols);
        return push(std::move(n));
    }

    int reshape(int x, std::vector<int> shape) {
        Node n = make(Op::Reshape, {x});
        n.val = val(x).reshaped(std::move(shape));
        return push(std::move(n));
    }

    // d[B, 2^depth - 1] -> mu[B, 2^depth]
    int tree_leaf(int d, int depth) {
        const Tensor<T>& dv = val(d);
        if (dv.rank() != 2 || dv.dim(1) != kernels::tree_nodes(depth))
            throw Error("tree_leaf: depth " + std::to_string(depth) + " wants " +
                        std::to_string(kernels::tree_nodes(depth)) + " routing columns, got " + shape_str(dv.shape));
        Node n = make(Op::TreeLeaf, {d});
        n.depth = depth;
        n.val = Tensor<T>({dv.dim(0), kernels::tree_leaves(depth)});
        kernels::tree_leaf(n.val.ptr(), dv.ptr(), dv.dim(0), depth);
        return push(std::move(n));
    }

    // L tensors [B,O] -> [B,L,O]
    int stack(const std::vector<int>& xs) {
        if (xs.empty()) throw Error("stack: no inputs");
        const Tensor<T>& first = val(xs[0]);
        const int B = first.dim(0), O = first.dim(1);
        Node n;
        n.op = Op::Stack;
        n.many = xs;
        n.needs = false;
        for (int x : xs) {
            require_same_shape(val(x), first, "stack");
            n.needs = n.needs || nodes_[static_cast<size_t>(x)].needs;
        }
        const int L = static_cast<int>(xs.size());
        n.val = Tensor<T>({B, L, O});
        for (int l = 0; l < L; ++l) {
            const Tensor<T>& xv = val(xs[static_cast<size_t>(l)]);
            for (int b = 0; b < B; ++b)
                std::copy_n(xv.ptr() + static_cast<size_t>(b) * O, O,
                            n.val.ptr() + (static_cast<size_t>(b) * L + l) * O);
        }
        return push(std::move(n));
    }

    // g[B,L] weights R[B,L,O] into [B,O].
    int gate_combine(int g, int R) {
        const Tensor<T>& gv = val(g);
        const Tensor<T>& Rv = val(R);
        if (gv.rank() != 2 || Rv.rank() != 3 || gv.dim(0) != Rv.dim(0) || gv.dim(1) != Rv.dim(1))
            throw Error("gate_combine: gate " + shape_str(gv.shape) + " vs regressors " + shape_str(Rv.shape));
        Node n = make(Op::GateCombine, {g, R});
        n.val = Tensor<T>({gv.dim(0), Rv.dim(2)});
        kernels::gate_combine(n.val.ptr(), gv.ptr(), Rv.ptr(), gv.dim(0), gv.dim(1), Rv.dim(2));
        return push(std::move(n));
    }

    int sub(int a, int b) {
        require_same_shape(val(a), val(b), "sub");
        Node n = make(Op::Sub, {a, b});
        n.val = Tensor<T>(val(a).shape);
        kernels::sub(n.val.ptr(), val(a).ptr(), val(b).ptr(), n.val.numel());
        return push(std::move(n));
    }

    // Scalar mean of squared entries.
    int mean_sq(int e) {
        Node n = make(Op::MeanSq, {e});
        n.val = Tensor<T>({1});
        kernels::mean_sq(n.val.ptr(), val(e).ptr(), val(e).numel());
        return push(std::move(n));
    }

    const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }

    // Zeros until backward touches the node.
    const Tensor<T>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty() && n.val.numel() > 0) n.grad = Tensor<T>(n.val.shape);
        return n.grad;
    }

    void backward(int loss) {
        if (value(loss).numel() != 1)
            throw Error("backward: loss must be scalar, got " + shape_str(value(loss).shape));
        Tensor<T> seed({1});
        seed[0] = T(1);
        backward_from(loss, std::move(seed));
    }

    void backward_from(int node, Tensor<T> seed) {
        require_same_shape(seed, value(node), "backward seed");
        for (Node& n : nodes_) n.grad = Tensor<T>();
        if (!nodes_[static_cast<size_t>(node)].needs) return;
        nodes_[static_cast<size_t>(node)].grad = std::move(seed);
        for (int id = node; id >= 0; --id) propagate(id);
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Op op = Op::Leaf;
        std::array<int, 3> in{-1, -1, -1};
        std::vector<int> many;
        Tensor<T> val;
        Tensor<T> grad;
        bool needs = false;
        int stride = 1, depth = 0, pt = 0, pl = 0;
    };

    std::vector<Node> nodes_;

    const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }

    Node make(Op op, std::initializer_list<int> ins) {
        Node n;
        n.op = op;
        int i = 0;
        for (int id : ins) {
            n.in[static_cast<size_t>(i++)] = id;
            n.needs = n.needs || nodes_[static_cast<size_t>(id)].needs;
        }
        return n;
    }

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor<T>& gbuf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>(n.val.shape);
        return n.grad;
    }

    bool wants(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs; }

    void propagate(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs || n.grad.empty()) return;
        if (!n.grad.all_finite())
            throw Error(std::string("backward: non-finite gradient at op ") + op_name(n.op));
        const Tensor<T>& dy = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Affine: {
                const Tensor<T>& xv = val(n.in[0]);
                const Tensor<T>& wv = val(n.in[1]);
                const int B = xv.dim(0), In = xv.dim(1), Out = wv.dim(1);
                if (wants(n.in[0])) kernels::affine_dx(gbuf(n.in[0]).ptr(), dy.ptr(), wv.ptr(), B, In, Out);
                if (wants(n.in[1])) kernels::affine_dw(gbuf(n.in[1]).ptr(), xv.ptr(), dy.ptr(), B, In, Out);
                if (wants(n.in[2])) kernels::affine_db(gbuf(n.in[2]).ptr(), dy.ptr(), B, Out);
                break;
            }
            case Op::Conv2d: {
                const Tensor<T>& xv = val(n.in[0]);
                const Tensor<T>& kv = val(n.in[1]);
                const int B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
                const int Cout = kv.dim(0), Kh = kv.dim(2), Kw = kv.dim(3);
                const int Ho = n.val.dim(2), Wo = n.val.dim(3);
                if (wants(n.in[0]))
                    kernels::conv2d_dx(gbuf(n.in[0]).ptr(), dy.ptr(), kv.ptr(), B, Cin, H, W, Cout, Kh, Kw,
                                       n.stride, n.pt, n.pl, Ho, Wo);
                if (wants(n.in[1]))
                    kernels::conv2d_dk(gbuf(n.in[1]).ptr(), xv.ptr(), dy.ptr(), B, Cin, H, W, Cout, Kh, Kw,
                                       n.stride, n.pt, n.pl, Ho, Wo);
                break;
            }
            case Op::ChannelBias: {
                const Tensor<T>& xv = val(n.in[0]);
                if (wants(n.in[0])) {
                    Tensor<T>& dx = gbuf(n.in[0]);
                    for (size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
                }
                if (wants(n.in[1]))
                    kernels::channel_bias_db(gbuf(n.in[1]).ptr(), dy.ptr(), xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3));
                break;
            }
            case Op::Relu:
                if (wants(n.in[0])) kernels::relu_dx(gbuf(n.in[0]).ptr(), val(n.in[0]).ptr(), dy.ptr(), dy.numel());
                break;
            case Op::Sigmoid:
                if (wants(n.in[0])) kernels::sigmoid_dx(gbuf(n.in[0]).ptr(), n.val.ptr(), dy.ptr(), dy.numel());
                break;
            case Op::Softmax: {
                if (wants(n.in[0])) {
                    const int cols = n.val.dim(n.val.rank() - 1);
                    const int rows = static_cast<int>(n.val.numel()) / cols;
                    kernels::softmax_dx(gbuf(n.in[0]).ptr(), n.val.ptr(), dy.ptr(), rows, cols);
                }
                break;
            }
            case Op::Reshape:
                if (wants(n.in[0])) {
                    Tensor<T>& dx = gbuf(n.in[0]);
                    for (size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
                }
                break;
            case Op::TreeLeaf:
                if (wants(n.in[0]))
                    kernels::tree_leaf_dd(gbuf(n.in[0]).ptr(), val(n.in[0]).ptr(), dy.ptr(), val(n.in[0]).dim(0), n.depth);
                break;
            case Op::Stack: {
                const int L = static_cast<int>(n.many.size());
                const int B = n.val.dim(0), O = n.val.dim(2);
                for (int l = 0; l < L; ++l) {
                    int x = n.many[static_cast<size_t>(l)];
                    if (!wants(x)) continue;
                    Tensor<T>& dx = gbuf(x);
                    for (int b = 0; b < B; ++b) {
                        const T* src = dy.ptr() + (static_cast<size_t>(b) * L + l) * O;
                        T* dst = dx.ptr() + static_cast<size_t>(b) * O;
                        for (int o = 0; o < O; ++o) dst[o] += src[o];
                    }
                }
                break;
            }
            case Op::GateCombine: {
                const Tensor<T>& gv = val(n.in[0]);
                const Tensor<T>& Rv = val(n.in[1]);
                const int B = gv.dim(0), L = gv.dim(1), O = Rv.dim(2);
                if (wants(n.in[0])) kernels::gate_combine_dg(gbuf(n.in[0]).ptr(), Rv.ptr(), dy.ptr(), B, L, O);
                if (wants(n.in[1])) kernels::gate_combine_dR(gbuf(n.in[1]).ptr(), gv.ptr(), dy.ptr(), B, L, O);
                break;
            }
            case Op::Sub: {
                if (wants(n.in[0])) {
                    Tensor<T>& da = gbuf(n.in[0]);
                    for (size_t i = 0; i < da.numel(); ++i) da[i] += dy[i];
                }
                if (wants(n.in[1])) {
                    Tensor<T>& db = gbuf(n.in[1]);
                    for (size_t i = 0; i < db.numel(); ++i) db[i] -= dy[i];
                }
                break;
            }
            case Op::MeanSq:
                if (wants(n.in[0]))
                    kernels::mean_sq_de(gbuf(n.in[0]).ptr(), val(n.in[0]).ptr(), dy[0], val(n.in[0]).numel());
                break;
        }
    }
};

}  // namespace tgre
