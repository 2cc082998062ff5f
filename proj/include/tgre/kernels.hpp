// Compute kernels for the forward/backward passes. Every kernel exists twice:
// kernels::serial is the reference implementation, kernels::par the OpenMP
// one. The unqualified names dispatch on the thread budget.
//
// All kernels are gather-style: each output element is produced by exactly
// one loop iteration with a fixed inner accumulation order, so serial and
// parallel paths are bit-identical and results do not depend on the thread
// count. Inner products accumulate in double.
//
// Backward kernels add into their outputs (gradient accumulation).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tgre/parallel.hpp"
#include "tgre/tensor.hpp"

namespace tgre::kernels {

enum class Pad { Same, Valid };

struct ConvDims {
    int ho = 0, wo = 0;
    int pad_top = 0, pad_left = 0;
};

// "same" keeps ceil(extent/stride); "valid" requires kernel <= extent.
inline ConvDims conv_out(int h, int w, int kh, int kw, int stride, Pad pad) {
    ConvDims d;
    if (pad == Pad::Same) {
        d.ho = (h + stride - 1) / stride;
        d.wo = (w + stride - 1) / stride;
        int th = (d.ho - 1) * stride + kh - h;
        int tw = (d.wo - 1) * stride + kw - w;
        d.pad_top = th > 0 ? th / 2 : 0;
        d.pad_left = tw > 0 ? tw / 2 : 0;
    } else {
        if (h < kh || w < kw)
            throw Error("conv2d: valid padding needs kernel <= input, got " + std::to_string(kh) + "x" +
                        std::to_string(kw) + " on " + std::to_string(h) + "x" + std::to_string(w));
        d.ho = (h - kh) / stride + 1;
        d.wo = (w - kw) / stride + 1;
    }
    return d;
}

inline int tree_nodes(int depth) { return (1 << depth) - 1; }
inline int tree_leaves(int depth) { return 1 << depth; }

// ---------------------------------------------------------------- serial --

namespace serial {

// y[b,o] = b[o] + sum_k x[b,k] w[k,o]
template <typename T>
void affine(T* y, const T* x, const T* w, const T* bias, int B, int In, int Out) {
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < Out; ++o) {
            double acc = static_cast<double>(bias[o]);
            const T* xr = x + static_cast<size_t>(b) * In;
            for (int k = 0; k < In; ++k) acc += static_cast<double>(xr[k]) * static_cast<double>(w[static_cast<size_t>(k) * Out + o]);
            y[static_cast<size_t>(b) * Out + o] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void affine_dx(T* dx, const T* dy, const T* w, int B, int In, int Out) {
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < In; ++k) {
            double acc = 0;
            const T* dyr = dy + static_cast<size_t>(b) * Out;
            const T* wr = w + static_cast<size_t>(k) * Out;
            for (int o = 0; o < Out; ++o) acc += static_cast<double>(dyr[o]) * static_cast<double>(wr[o]);
            dx[static_cast<size_t>(b) * In + k] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void affine_dw(T* dw, const T* x, const T* dy, int B, int In, int Out) {
    for (int k = 0; k < In; ++k) {
        for (int o = 0; o < Out; ++o) {
            double acc = 0;
            for (int b = 0; b < B; ++b)
                acc += static_cast<double>(x[static_cast<size_t>(b) * In + k]) * static_cast<double>(dy[static_cast<size_t>(b) * Out + o]);
            dw[static_cast<size_t>(k) * Out + o] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void affine_db(T* db, const T* dy, int B, int Out) {
    for (int o = 0; o < Out; ++o) {
        double acc = 0;
        for (int b = 0; b < B; ++b) acc += static_cast<double>(dy[static_cast<size_t>(b) * Out + o]);
        db[o] += static_cast<T>(acc);
    }
}

// x[B,Cin,H,W] (*) k[Cout,Cin,Kh,Kw] -> y[B,Cout,Ho,Wo], zero padding.
template <typename T>
void conv2d(T* y, const T* x, const T* k, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
            int stride, int pt, int pl, int Ho, int Wo) {
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            for (int i = 0; i < Ho; ++i) {
                for (int j = 0; j < Wo; ++j) {
                    double acc = 0;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const T* xc = x + (static_cast<size_t>(b) * Cin + ci) * H * W;
                        const T* kc = k + (static_cast<size_t>(co) * Cin + ci) * Kh * Kw;
                        for (int u = 0; u < Kh; ++u) {
                            int yy = i * stride - pt + u;
                            if (yy < 0 || yy >= H) continue;
                            for (int v = 0; v < Kw; ++v) {
                                int xx = j * stride - pl + v;
                                if (xx < 0 || xx >= W) continue;
                                acc += static_cast<double>(xc[static_cast<size_t>(yy) * W + xx]) * static_cast<double>(kc[u * Kw + v]);
                            }
                        }
                    }
                    y[((static_cast<size_t>(b) * Cout + co) * Ho + i) * Wo + j] = static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_dx(T* dx, const T* dy, const T* k, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
               int stride, int pt, int pl, int Ho, int Wo) {
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int yy = 0; yy < H; ++yy) {
                for (int xx = 0; xx < W; ++xx) {
                    double acc = 0;
                    for (int co = 0; co < Cout; ++co) {
                        const T* dyc = dy + (static_cast<size_t>(b) * Cout + co) * Ho * Wo;
                        const T* kc = k + (static_cast<size_t>(co) * Cin + ci) * Kh * Kw;
                        for (int u = 0; u < Kh; ++u) {
                            int num = yy + pt - u;
                            if (num < 0 || num % stride) continue;
                            int i = num / stride;
                            if (i >= Ho) continue;
                            for (int v = 0; v < Kw; ++v) {
                                int num2 = xx + pl - v;
                                if (num2 < 0 || num2 % stride) continue;
                                int j = num2 / stride;
                                if (j >= Wo) continue;
                                acc += static_cast<double>(dyc[static_cast<size_t>(i) * Wo + j]) * static_cast<double>(kc[u * Kw + v]);
                            }
                        }
                    }
                    dx[(static_cast<size_t>(b) * Cin + ci) * H * W + static_cast<size_t>(yy) * W + xx] += static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_dk(T* dk, const T* x, const T* dy, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
               int stride, int pt, int pl, int Ho, int Wo) {
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int u = 0; u < Kh; ++u) {
                for (int v = 0; v < Kw; ++v) {
                    double acc = 0;
                    for (int b = 0; b < B; ++b) {
                        const T* xc = x + (static_cast<size_t>(b) * Cin + ci) * H * W;
                        const T* dyc = dy + (static_cast<size_t>(b) * Cout + co) * Ho * Wo;
                        for (int i = 0; i < Ho; ++i) {
                            int yy = i * stride - pt + u;
                            if (yy < 0 || yy >= H) continue;
                            for (int j = 0; j < Wo; ++j) {
                                int xx = j * stride - pl + v;
                                if (xx < 0 || xx >= W) continue;
                                acc += static_cast<double>(xc[static_cast<size_t>(yy) * W + xx]) * static_cast<double>(dyc[static_cast<size_t>(i) * Wo + j]);
                            }
                        }
                    }
                    dk[((static_cast<size_t>(co) * Cin + ci) * Kh + u) * Kw + v] += static_cast<T>(acc);
                }
            }
        }
    }
}

// y[b,c,s] = x[b,c,s] + bias[c], spatial size S flattened.
template <typename T>
void channel_bias(T* y, const T* x, const T* bias, int B, int C, int S) {
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* xr = x + (static_cast<size_t>(b) * C + c) * S;
            T* yr = y + (static_cast<size_t>(b) * C + c) * S;
            for (int s = 0; s < S; ++s) yr[s] = xr[s] + bias[c];
        }
}

template <typename T>
void channel_bias_db(T* db, const T* dy, int B, int C, int S) {
    for (int c = 0; c < C; ++c) {
        double acc = 0;
        for (int b = 0; b < B; ++b) {
            const T* dyr = dy + (static_cast<size_t>(b) * C + c) * S;
            for (int s = 0; s < S; ++s) acc += static_cast<double>(dyr[s]);
        }
        db[c] += static_cast<T>(acc);
    }
}

template <typename T>
void relu(T* y, const T* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_dx(T* dx, const T* x, const T* dy, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] += x[i] > T(0) ? dy[i] : T(0);
}

// Branch form keeps exp() argument non-positive.
template <typename T>
T sigmoid_one(T z) {
    if (z >= T(0)) {
        T e = std::exp(-z);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(z);
    return e / (T(1) + e);
}

template <typename T>
void sigmoid(T* y, const T* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = sigmoid_one(x[i]);
}

template <typename T>
void sigmoid_dx(T* dx, const T* y, const T* dy, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
}

// Row-wise softmax with max subtraction.
template <typename T>
void softmax(T* y, const T* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * cols;
        T* yr = y + static_cast<size_t>(r) * cols;
        T mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0;
        for (int c = 0; c < cols; ++c) {
            double e = std::exp(static_cast<double>(xr[c] - mx));
            yr[c] = static_cast<T>(e);
            sum += e;
        }
        for (int c = 0; c < cols; ++c) yr[c] = static_cast<T>(static_cast<double>(yr[c]) / sum);
    }
}

template <typename T>
void softmax_dx(T* dx, const T* y, const T* dy, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const T* yr = y + static_cast<size_t>(r) * cols;
        const T* dyr = dy + static_cast<size_t>(r) * cols;
        T* dxr = dx + static_cast<size_t>(r) * cols;
        double dot = 0;
        for (int c = 0; c < cols; ++c) dot += static_cast<double>(yr[c]) * static_cast<double>(dyr[c]);
        for (int c = 0; c < cols; ++c) dxr[c] += static_cast<T>(static_cast<double>(yr[c]) * (static_cast<double>(dyr[c]) - dot));
    }
}

// Routing probabilities d[B, 2^D-1] (breadth-first, d = P(go left)) to leaf
// probabilities mu[B, 2^D]: mass 1 at the root split by d / 1-d at each node.
template <typename T>
void tree_leaf(T* mu, const T* d, int B, int depth) {
    const int nn = tree_nodes(depth);
    const int nl = tree_leaves(depth);
    std::vector<T> reach(static_cast<size_t>(nn) + nl);
    for (int b = 0; b < B; ++b) {
        const T* dr = d + static_cast<size_t>(b) * nn;
        reach[0] = T(1);
        for (int n = 0; n < nn; ++n) {
            reach[2 * n + 1] = reach[n] * dr[n];
            reach[2 * n + 2] = reach[n] * (T(1) - dr[n]);
        }
        for (int l = 0; l < nl; ++l) mu[static_cast<size_t>(b) * nl + l] = reach[nn + l];
    }
}

// First leaf (extended heap index) under node n, and the leaf count.
inline void subtree_leaf_span(int n, int depth, int* first, int* count) {
    int e = n;
    int steps = 0;
    const int nn = tree_nodes(depth);
    while (e < nn) {
        e = 2 * e + 1;
        ++steps;
    }
    *first = e - nn;
    *count = 1 << steps;
}

// d mu_l / d d_n = +- (product of the leaf's path terms excluding node n).
// The excluded-node product is recomputed per leaf instead of dividing by
// d_n, so saturated probabilities stay finite.
template <typename T>
void tree_leaf_dd(T* dd, const T* d, const T* dmu, int B, int depth) {
    const int nn = tree_nodes(depth);
    const int nl = tree_leaves(depth);
    for (int b = 0; b < B; ++b) {
        const T* dr = d + static_cast<size_t>(b) * nn;
        const T* dmur = dmu + static_cast<size_t>(b) * nl;
        T* ddr = dd + static_cast<size_t>(b) * nn;
        for (int n = 0; n < nn; ++n) {
            int first, count;
            subtree_leaf_span(n, depth, &first, &count);
            double acc = 0;
            for (int l = first; l < first + count; ++l) {
                double prod = 1;
                int e = nn + l;
                while (e > 0) {
                    int parent = (e - 1) / 2;
                    if (parent != n) prod *= static_cast<double>(e % 2 ? dr[parent] : T(1) - dr[parent]);
                    e = parent;
                }
                double sign = l < first + count / 2 ? 1.0 : -1.0;
                acc += sign * prod * static_cast<double>(dmur[l]);
            }
            ddr[n] += static_cast<T>(acc);
        }
    }
}

// y[b,o] = sum_l g[b,l] R[b,l,o]
template <typename T>
void gate_combine(T* y, const T* g, const T* R, int B, int L, int O) {
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
            double acc = 0;
            for (int l = 0; l < L; ++l)
                acc += static_cast<double>(g[static_cast<size_t>(b) * L + l]) *
                       static_cast<double>(R[(static_cast<size_t>(b) * L + l) * O + o]);
            y[static_cast<size_t>(b) * O + o] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void gate_combine_dg(T* dg, const T* R, const T* dy, int B, int L, int O) {
    for (int b = 0; b < B; ++b) {
        for (int l = 0; l < L; ++l) {
            double acc = 0;
            for (int o = 0; o < O; ++o)
                acc += static_cast<double>(R[(static_cast<size_t>(b) * L + l) * O + o]) *
                       static_cast<double>(dy[static_cast<size_t>(b) * O + o]);
            dg[static_cast<size_t>(b) * L + l] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void gate_combine_dR(T* dR, const T* g, const T* dy, int B, int L, int O) {
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l)
            for (int o = 0; o < O; ++o)
                dR[(static_cast<size_t>(b) * L + l) * O + o] +=
                    g[static_cast<size_t>(b) * L + l] * dy[static_cast<size_t>(b) * O + o];
}

template <typename T>
void sub(T* y, const T* a, const T* b, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

// Scalar (1/n) sum e^2.
template <typename T>
void mean_sq(T* y, const T* e, size_t n) {
    double acc = 0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(e[i]) * static_cast<double>(e[i]);
    y[0] = static_cast<T>(acc / static_cast<double>(n));
}

template <typename T>
void mean_sq_de(T* de, const T* e, T dy, size_t n) {
    const T s = static_cast<T>(2.0 / static_cast<double>(n)) * dy;
    for (size_t i = 0; i < n; ++i) de[i] += s * e[i];
}

}  // namespace serial

// ------------------------------------------------------------------- par --

namespace par {

template <typename T>
void affine(T* y, const T* x, const T* w, const T* bias, int B, int In, int Out) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < Out; ++o) {
            double acc = static_cast<double>(bias[o]);
            const T* xr = x + static_cast<size_t>(b) * In;
            for (int k = 0; k < In; ++k) acc += static_cast<double>(xr[k]) * static_cast<double>(w[static_cast<size_t>(k) * Out + o]);
            y[static_cast<size_t>(b) * Out + o] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void affine_dx(T* dx, const T* dy, const T* w, int B, int In, int Out) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < In; ++k) {
            double acc = 0;
            const T* dyr = dy + static_cast<size_t>(b) * Out;
            const T* wr = w + static_cast<size_t>(k) * Out;
            for (int o = 0; o < Out; ++o) acc += static_cast<double>(dyr[o]) * static_cast<double>(wr[o]);
            dx[static_cast<size_t>(b) * In + k] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void affine_dw(T* dw, const T* x, const T* dy, int B, int In, int Out) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int k = 0; k < In; ++k) {
        for (int o = 0; o < Out; ++o) {
            double acc = 0;
            for (int b = 0; b < B; ++b)
                acc += static_cast<double>(x[static_cast<size_t>(b) * In + k]) * static_cast<double>(dy[static_cast<size_t>(b) * Out + o]);
            dw[static_cast<size_t>(k) * Out + o] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void affine_db(T* db, const T* dy, int B, int Out) {
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (int o = 0; o < Out; ++o) {
        double acc = 0;
        for (int b = 0; b < B; ++b) acc += static_cast<double>(dy[static_cast<size_t>(b) * Out + o]);
        db[o] += static_cast<T>(acc);
    }
}

template <typename T>
void conv2d(T* y, const T* x, const T* k, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
            int stride, int pt, int pl, int Ho, int Wo) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            for (int i = 0; i < Ho; ++i) {
                for (int j = 0; j < Wo; ++j) {
                    double acc = 0;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const T* xc = x + (static_cast<size_t>(b) * Cin + ci) * H * W;
                        const T* kc = k + (static_cast<size_t>(co) * Cin + ci) * Kh * Kw;
                        for (int u = 0; u < Kh; ++u) {
                            int yy = i * stride - pt + u;
                            if (yy < 0 || yy >= H) continue;
                            for (int v = 0; v < Kw; ++v) {
                                int xx = j * stride - pl + v;
                                if (xx < 0 || xx >= W) continue;
                                acc += static_cast<double>(xc[static_cast<size_t>(yy) * W + xx]) * static_cast<double>(kc[u * Kw + v]);
                            }
                        }
                    }
                    y[((static_cast<size_t>(b) * Cout + co) * Ho + i) * Wo + j] = static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_dx(T* dx, const T* dy, const T* k, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
               int stride, int pt, int pl, int Ho, int Wo) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int yy = 0; yy < H; ++yy) {
                for (int xx = 0; xx < W; ++xx) {
                    double acc = 0;
                    for (int co = 0; co < Cout; ++co) {
                        const T* dyc = dy + (static_cast<size_t>(b) * Cout + co) * Ho * Wo;
                        const T* kc = k + (static_cast<size_t>(co) * Cin + ci) * Kh * Kw;
                        for (int u = 0; u < Kh; ++u) {
                            int num = yy + pt - u;
                            if (num < 0 || num % stride) continue;
                            int i = num / stride;
                            if (i >= Ho) continue;
                            for (int v = 0; v < Kw; ++v) {
                                int num2 = xx + pl - v;
                                if (num2 < 0 || num2 % stride) continue;
                                int j = num2 / stride;
                                if (j >= Wo) continue;
                                acc += static_cast<double>(dyc[static_cast<size_t>(i) * Wo + j]) * static_cast<double>(kc[u * Kw + v]);
                            }
                        }
                    }
                    dx[(static_cast<size_t>(b) * Cin + ci) * H * W + static_cast<size_t>(yy) * W + xx] += static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_dk(T* dk, const T* x, const T* dy, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
               int stride, int pt, int pl, int Ho, int Wo) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int u = 0; u < Kh; ++u) {
                for (int v = 0; v < Kw; ++v) {
                    double acc = 0;
                    for (int b = 0; b < B; ++b) {
                        const T* xc = x + (static_cast<size_t>(b) * Cin + ci) * H * W;
                        const T* dyc = dy + (static_cast<size_t>(b) * Cout + co) * Ho * Wo;
                        for (int i = 0; i < Ho; ++i) {
                            int yy = i * stride - pt + u;
                            if (yy < 0 || yy >= H) continue;
                            for (int j = 0; j < Wo; ++j) {
                                int xx = j * stride - pl + v;
                                if (xx < 0 || xx >= W) continue;
                                acc += static_cast<double>(xc[static_cast<size_t>(yy) * W + xx]) * static_cast<double>(dyc[static_cast<size_t>(i) * Wo + j]);
                            }
                        }
                    }
                    dk[((static_cast<size_t>(co) * Cin + ci) * Kh + u) * Kw + v] += static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void relu(T* y, const T* x, size_t n) {
    const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (long long i = 0; i < nn; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_dx(T* dx, const T* x, const T* dy, size_t n) {
    const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (long long i = 0; i < nn; ++i) dx[i] += x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void sigmoid(T* y, const T* x, size_t n) {
    const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (long long i = 0; i < nn; ++i) y[i] = serial::sigmoid_one(x[i]);
}

template <typename T>
void sigmoid_dx(T* dx, const T* y, const T* dy, size_t n) {
    const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (long long i = 0; i < nn; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
}

template <typename T>
void softmax(T* y, const T* x, int rows, int cols) {
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (int r = 0; r < rows; ++r) serial::softmax(y + static_cast<size_t>(r) * cols, x + static_cast<size_t>(r) * cols, 1, cols);
}

template <typename T>
void softmax_dx(T* dx, const T* y, const T* dy, int rows, int cols) {
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (int r = 0; r < rows; ++r)
        serial::softmax_dx(dx + static_cast<size_t>(r) * cols, y + static_cast<size_t>(r) * cols,
                           dy + static_cast<size_t>(r) * cols, 1, cols);
}

template <typename T>
void tree_leaf(T* mu, const T* d, int B, int depth) {
    const int nn = tree_nodes(depth);
    const int nl = tree_leaves(depth);
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b)
        serial::tree_leaf(mu + static_cast<size_t>(b) * nl, d + static_cast<size_t>(b) * nn, 1, depth);
}

template <typename T>
void tree_leaf_dd(T* dd, const T* d, const T* dmu, int B, int depth) {
    const int nn = tree_nodes(depth);
    const int nl = tree_leaves(depth);
#pragma omp parallel for schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b)
        serial::tree_leaf_dd(dd + static_cast<size_t>(b) * nn, d + static_cast<size_t>(b) * nn,
                             dmu + static_cast<size_t>(b) * nl, 1, depth);
}

template <typename T>
void gate_combine(T* y, const T* g, const T* R, int B, int L, int O) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
            double acc = 0;
            for (int l = 0; l < L; ++l)
                acc += static_cast<double>(g[static_cast<size_t>(b) * L + l]) *
                       static_cast<double>(R[(static_cast<size_t>(b) * L + l) * O + o]);
            y[static_cast<size_t>(b) * O + o] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void gate_combine_dg(T* dg, const T* R, const T* dy, int B, int L, int O) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b) {
        for (int l = 0; l < L; ++l) {
            double acc = 0;
            for (int o = 0; o < O; ++o)
                acc += static_cast<double>(R[(static_cast<size_t>(b) * L + l) * O + o]) *
                       static_cast<double>(dy[static_cast<size_t>(b) * O + o]);
            dg[static_cast<size_t>(b) * L + l] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void gate_combine_dR(T* dR, const T* g, const T* dy, int B, int L, int O) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_budget())
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l)
            for (int o = 0; o < O; ++o)
                dR[(static_cast<size_t>(b) * L + l) * O + o] +=
                    g[static_cast<size_t>(b) * L + l] * dy[static_cast<size_t>(b) * O + o];
}

}  // namespace par

// -------------------------------------------------------------- dispatch --

#define TGRE_DISPATCH(fn, ...)                   \
    do {                                         \
        if (parallel_enabled())                  \
            par::fn(__VA_ARGS__);                \
        else                                     \
            serial::fn(__VA_ARGS__);             \
    } while (0)

template <typename T>
void affine(T* y, const T* x, const T* w, const T* b, int B, int In, int Out) {
    TGRE_DISPATCH(affine, y, x, w, b, B, In, Out);
}
template <typename T>
void affine_dx(T* dx, const T* dy, const T* w, int B, int In, int Out) {
    TGRE_DISPATCH(affine_dx, dx, dy, w, B, In, Out);
}
template <typename T>
void affine_dw(T* dw, const T* x, const T* dy, int B, int In, int Out) {
    TGRE_DISPATCH(affine_dw, dw, x, dy, B, In, Out);
}
template <typename T>
void affine_db(T* db, const T* dy, int B, int Out) {
    TGRE_DISPATCH(affine_db, db, dy, B, Out);
}
template <typename T>
void conv2d(T* y, const T* x, const T* k, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
            int stride, int pt, int pl, int Ho, int Wo) {
    TGRE_DISPATCH(conv2d, y, x, k, B, Cin, H, W, Cout, Kh, Kw, stride, pt, pl, Ho, Wo);
}
template <typename T>
void conv2d_dx(T* dx, const T* dy, const T* k, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
               int stride, int pt, int pl, int Ho, int Wo) {
    TGRE_DISPATCH(conv2d_dx, dx, dy, k, B, Cin, H, W, Cout, Kh, Kw, stride, pt, pl, Ho, Wo);
}
template <typename T>
void conv2d_dk(T* dk, const T* x, const T* dy, int B, int Cin, int H, int W, int Cout, int Kh, int Kw,
               int stride, int pt, int pl, int Ho, int Wo) {
    TGRE_DISPATCH(conv2d_dk, dk, x, dy, B, Cin, H, W, Cout, Kh, Kw, stride, pt, pl, Ho, Wo);
}
template <typename T>
void channel_bias(T* y, const T* x, const T* b, int B, int C, int S) {
    serial::channel_bias(y, x, b, B, C, S);
}
template <typename T>
void channel_bias_db(T* db, const T* dy, int B, int C, int S) {
    serial::channel_bias_db(db, dy, B, C, S);
}
template <typename T>
void relu(T* y, const T* x, size_t n) {
    TGRE_DISPATCH(relu, y, x, n);
}
template <typename T>
void relu_dx(T* dx, const T* x, const T* dy, size_t n) {
    TGRE_DISPATCH(relu_dx, dx, x, dy, n);
}
template <typename T>
void sigmoid(T* y, const T* x, size_t n) {
    TGRE_DISPATCH(sigmoid, y, x, n);
}
template <typename T>
void sigmoid_dx(T* dx, const T* y, const T* dy, size_t n) {
    TGRE_DISPATCH(sigmoid_dx, dx, y, dy, n);
}
template <typename T>
void softmax(T* y, const T* x, int rows, int cols) {
    TGRE_DISPATCH(softmax, y, x, rows, cols);
}
template <typename T>
void softmax_dx(T* dx, const T* y, const T* dy, int rows, int cols) {
    TGRE_DISPATCH(softmax_dx, dx, y, dy, rows, cols);
}
template <typename T>
void tree_leaf(T* mu, const T* d, int B, int depth) {
    TGRE_DISPATCH(tree_leaf, mu, d, B, depth);
}
template <typename T>
void tree_leaf_dd(T* dd, const T* d, const T* dmu, int B, int depth) {
    TGRE_DISPATCH(tree_leaf_dd, dd, d, dmu, B, depth);
}
template <typename T>
void gate_combine(T* y, const T* g, const T* R, int B, int L, int O) {
    TGRE_DISPATCH(gate_combine, y, g, R, B, L, O);
}
template <typename T>
void gate_combine_dg(T* dg, const T* R, const T* dy, int B, int L, int O) {
    TGRE_DISPATCH(gate_combine_dg, dg, R, dy, B, L, O);
}
template <typename T>
void gate_combine_dR(T* dR, const T* g, const T* dy, int B, int L, int O) {
    TGRE_DISPATCH(gate_combine_dR, dR, g, dy, B, L, O);
}
template <typename T>
void sub(T* y, const T* a, const T* b, size_t n) {
    serial::sub(y, a, b, n);
}
template <typename T>
void mean_sq(T* y, const T* e, size_t n) {
    serial::mean_sq(y, e, n);
}
template <typename T>
void mean_sq_de(T* de, const T* e, T dy, size_t n) {
    serial::mean_sq_de(de, e, dy, n);
}

#undef TGRE_DISPATCH

}  // namespace tgre::kernels
