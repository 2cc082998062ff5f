// Gating tests. The tree-gate oracle evaluates each leaf probability as an
// explicit product over the leaf's root path, written independently of the
// library's telescoping implementation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tgre/gating.hpp"
#include "tgre/graph.hpp"

using namespace tgre;

namespace {

// Path-product evaluation of the leaf probabilities: walk root -> leaf,
// multiplying d (left) or 1-d (right). Leaf l's path reads the bits of l
// from the top; children of n are 2n+1 / 2n+2.
std::vector<double> oracle_leaf_probs(const std::vector<double>& d, int depth) {
    const int L = 1 << depth;
    std::vector<double> mu(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        double prod = 1.0;
        int n = 0;
        for (int level = depth - 1; level >= 0; --level) {
            const int right = (l >> level) & 1;
            prod *= right ? 1.0 - d[static_cast<size_t>(n)] : d[static_cast<size_t>(n)];
            n = 2 * n + 1 + right;
        }
        mu[static_cast<size_t>(l)] = prod;
    }
    return mu;
}

double oracle_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TreeGateT<double> random_tree(int feature_dim, int depth, Rng& rng, double scale = 1.0) {
    TreeGateT<double> g{depth, Tensord({feature_dim, kernels::tree_nodes(depth)}),
                        Tensord({kernels::tree_nodes(depth)})};
    for (size_t i = 0; i < g.w.numel(); ++i) g.w[i] = rng.uniform(-scale, scale);
    for (size_t i = 0; i < g.b.numel(); ++i) g.b[i] = rng.uniform(-scale, scale);
    return g;
}

std::vector<double> rand_x(int n, Rng& rng) {
    std::vector<double> x(static_cast<size_t>(n));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("routing probability basics") {
    TreeGateT<double> g{1, Tensord({3, 1}), Tensord({1})};
    std::vector<double> x = {0.3, -0.4, 0.9};
    CHECK(routing_prob(g, 0, std::span<const double>(x)) == 0.5);  // sigma(0)

    g.b[0] = 40.0;  // saturation: always left
    CHECK(routing_prob(g, 0, std::span<const double>(x)) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        TreeGateT<double> t = random_tree(5, 2, rng);
        std::vector<double> xx = rand_x(5, rng);
        for (int n = 0; n < t.nodes(); ++n) {
            double z = t.b[static_cast<size_t>(n)];
            for (int i = 0; i < 5; ++i) z += t.w[static_cast<size_t>(i) * t.nodes() + n] * xx[static_cast<size_t>(i)];
            CHECK(std::abs(routing_prob(t, n, std::span<const double>(xx)) - oracle_sigmoid(z)) < 1e-12);
        }
    }
}

TEST_CASE("routing probability rejects mismatched feature lengths") {
    TreeGateT<double> g{1, Tensord({3, 1}), Tensord({1})};
    std::vector<double> x = {1.0, 2.0};
    CHECK_THROWS_AS(routing_prob(g, 0, std::span<const double>(x)), Error);
    CHECK_THROWS_AS(leaf_probabilities(g, std::span<const double>(x)), Error);
}

TEST_CASE("leaf probabilities: single split with d=0.7") {
    TreeGateT<double> g{1, Tensord({1, 1}), Tensord({1})};
    g.b[0] = std::log(0.7 / 0.3);  // sigma(b) = 0.7
    std::vector<double> x = {0.0};
    GateVec<double> mu = leaf_probabilities(g, std::span<const double>(x));
    REQUIRE(mu.p.size() == 2);
    CHECK(mu.p[0] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(mu.p[1] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("leaf probabilities: depth 2 all-zero parameters give exactly 1/4") {
    TreeGateT<double> g{2, Tensord({4, 3}), Tensord({3})};
    std::vector<double> x = {0.2, -0.1, 0.5, 0.8};
    GateVec<double> mu = leaf_probabilities(g, std::span<const double>(x));
    REQUIRE(mu.p.size() == 4);
    for (double v : mu.p) CHECK(v == 0.25);
}

TEST_CASE("leaf probabilities match the path-product oracle at depth 3") {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        TreeGateT<double> g = random_tree(6, 3, rng, 2.0);
        std::vector<double> x = rand_x(6, rng);
        std::vector<double> d(static_cast<size_t>(g.nodes()));
        for (int n = 0; n < g.nodes(); ++n) d[static_cast<size_t>(n)] = routing_prob(g, n, std::span<const double>(x));
        std::vector<double> want = oracle_leaf_probs(d, 3);
        GateVec<double> mu = leaf_probabilities(g, std::span<const double>(x));
        REQUIRE(mu.p.size() == want.size());
        for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(mu.p[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("leaf probabilities normalize: 1000 random trees, depths 1..7") {
    Rng rng(47);
    for (int trial = 0; trial < 1000; ++trial) {
        const int depth = 1 + static_cast<int>(rng.below(7));
        const int fd = 2 + static_cast<int>(rng.below(6));
        TreeGateT<double> g = random_tree(fd, depth, rng, 3.0);
        std::vector<double> x = rand_x(fd, rng);
        GateVec<double> mu = leaf_probabilities(g, std::span<const double>(x));
        double sum = 0.0;
        for (double v : mu.p) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);

        // single precision: same contract at 1e-6
        TreeGateT<float> gf = g.cast<float>();
        std::vector<float> xf(x.begin(), x.end());
        GateVec<float> muf = leaf_probabilities(gf, std::span<const float>(xf));
        float fsum = 0.0f;
        for (float v : muf.p) fsum += v;
        CHECK(std::abs(fsum - 1.0f) < 1e-6f);
    }
}

TEST_CASE("sibling swap with sign-flipped node parameters permutes the leaf blocks") {
    Rng rng(53);
    const int depth = 3, fd = 4;
    for (int trial = 0; trial < 20; ++trial) {
        TreeGateT<double> g = random_tree(fd, depth, rng, 2.0);
        std::vector<double> x = rand_x(fd, rng);
        GateVec<double> base = leaf_probabilities(g, std::span<const double>(x));

        const int n = static_cast<int>(rng.below(static_cast<uint64_t>(kernels::tree_nodes(depth))));
        TreeGateT<double> swapped = g;
        for (size_t i = 0; i < g.w.numel(); ++i) swapped.w[i] = g.w[i];
        // negate the split so left/right routing swaps
        swapped.b[static_cast<size_t>(n)] = -g.b[static_cast<size_t>(n)];
        for (int i = 0; i < fd; ++i)
            swapped.w[static_cast<size_t>(i) * g.nodes() + n] = -g.w[static_cast<size_t>(i) * g.nodes() + n];
        // swap the child subtrees: block j below child c starts at (c+1)*2^j - 1
        const int lc = 2 * n + 1, rc = 2 * n + 2;
        for (int j = 0; lc < g.nodes() && (lc + 1) * (1 << j) - 1 < g.nodes(); ++j) {
            const int lb = (lc + 1) * (1 << j) - 1, rb = (rc + 1) * (1 << j) - 1;
            for (int o = 0; o < (1 << j); ++o) {
                std::swap(swapped.b[static_cast<size_t>(lb + o)], swapped.b[static_cast<size_t>(rb + o)]);
                for (int i = 0; i < fd; ++i)
                    std::swap(swapped.w[static_cast<size_t>(i) * g.nodes() + lb + o],
                              swapped.w[static_cast<size_t>(i) * g.nodes() + rb + o]);
            }
        }
        GateVec<double> perm = leaf_probabilities(swapped, std::span<const double>(x));

        int first = 0, count = 0;
        kernels::serial::subtree_leaf_span(lc, depth, &first, &count);
        int rfirst = 0, rcount = 0;
        kernels::serial::subtree_leaf_span(rc, depth, &rfirst, &rcount);
        REQUIRE(count == rcount);
        std::vector<double> want = base.p;
        for (int o = 0; o < count; ++o)
            std::swap(want[static_cast<size_t>(first + o)], want[static_cast<size_t>(rfirst + o)]);
        for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(perm.p[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("softmax gate: uniform, one-hot saturation and composition oracle") {
    const int fd = 5, L = 4;
    SoftmaxGateT<double> g{Tensord({fd, L}), Tensord({L})};
    Rng rng(59);
    std::vector<double> x = rand_x(fd, rng);
    GateVec<double> u = softmax_gate(g, std::span<const double>(x));
    for (double v : u.p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    g.b[2] = 1e6;
    GateVec<double> hot = softmax_gate(g, std::span<const double>(x));
    CHECK(hot.p[2] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(hot.argmax() == 2);

    for (int trial = 0; trial < 25; ++trial) {
        SoftmaxGateT<double> r{Tensord({fd, L}), Tensord({L})};
        for (size_t i = 0; i < r.w.numel(); ++i) r.w[i] = rng.uniform(-2.0, 2.0);
        for (size_t i = 0; i < r.b.numel(); ++i) r.b[i] = rng.uniform(-2.0, 2.0);
        std::vector<double> xx = rand_x(fd, rng);
        // independent composition: explicit affine then explicit softmax
        std::vector<double> z(L);
        for (int j = 0; j < L; ++j) {
            z[static_cast<size_t>(j)] = r.b[static_cast<size_t>(j)];
            for (int i = 0; i < fd; ++i)
                z[static_cast<size_t>(j)] += xx[static_cast<size_t>(i)] * r.w[static_cast<size_t>(i) * L + j];
        }
        double zmax = z[0], sum = 0.0;
        for (double v : z) zmax = std::max(zmax, v);
        std::vector<double> want(L);
        for (int j = 0; j < L; ++j) {
            want[static_cast<size_t>(j)] = std::exp(z[static_cast<size_t>(j)] - zmax);
            sum += want[static_cast<size_t>(j)];
        }
        for (double& v : want) v /= sum;
        GateVec<double> got = softmax_gate(r, std::span<const double>(xx));
        double gsum = 0.0;
        for (int j = 0; j < L; ++j) {
            CHECK(std::abs(got.p[static_cast<size_t>(j)] - want[static_cast<size_t>(j)]) < 1e-12);
            gsum += got.p[static_cast<size_t>(j)];
        }
        CHECK(std::abs(gsum - 1.0) < 1e-12);
    }
}

TEST_CASE("argmax ties break to the lowest index") {
    GateVec<double> a{{0.25, 0.25, 0.25, 0.25}};
    CHECK(a.argmax() == 0);
    GateVec<double> b{{0.1, 0.4, 0.4, 0.1}};
    CHECK(b.argmax() == 1);
}

TEST_CASE("tree gate gradients match finite differences through the graph") {
    Rng rng(61);
    const int fd = 4, depth = 2, nodes = kernels::tree_nodes(depth);
    for (bool uniform : {true, false}) {
        Tensord w({fd, nodes}), b({nodes});
        if (!uniform)
            for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.5, 1.5);
        Tensord x({1, fd});
        for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
        Tensord seed({1, kernels::tree_leaves(depth)});
        seed[static_cast<size_t>(rng.below(static_cast<uint64_t>(seed.numel())))] = 1.0;  // one-hot upstream

        auto build = [&](Graph<double>& g, const Tensord& pw, const Tensord& pb, std::vector<int>* ids) {
            int wi = g.leaf(pw, true), bi = g.leaf(pb, true);
            if (ids) *ids = {wi, bi};
            return g.tree_leaf(g.sigmoid(g.affine(g.leaf(x), wi, bi)), depth);
        };
        Graph<double> g;
        std::vector<int> ids;
        int mu = build(g, w, b, &ids);
        g.backward_from(mu, seed);
        Tensord dw = g.grad(ids[0]), db = g.grad(ids[1]);

        const double h = 1e-6;
        auto eval = [&](const Tensord& pw, const Tensord& pb) {
            Graph<double> fresh;
            const Tensord& v = fresh.value(build(fresh, pw, pb, nullptr));
            double s = 0.0;
            for (size_t i = 0; i < v.numel(); ++i) s += v[i] * seed[i];
            return s;
        };
        for (size_t i = 0; i < w.numel(); ++i) {
            Tensord wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            const double fd_g = (eval(wp, b) - eval(wm, b)) / (2 * h);
            CHECK(std::abs(fd_g - dw[i]) / std::max({std::abs(fd_g), std::abs(dw[i]), 1e-8}) < 1e-6);
        }
        for (size_t i = 0; i < b.numel(); ++i) {
            Tensord bp = b, bm = b;
            bp[i] += h;
            bm[i] -= h;
            const double fd_g = (eval(w, bp) - eval(w, bm)) / (2 * h);
            CHECK(std::abs(fd_g - db[i]) / std::max({std::abs(fd_g), std::abs(db[i]), 1e-8}) < 1e-6);
        }
    }
}

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
    Graph<double> g;
    Rng rng(67);
    Tensord w({3, 3}), b({3}), x({1, 3});
    for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
    for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    int wi = g.leaf(w, true), bi = g.leaf(b, true);
    int mu = g.tree_leaf(g.sigmoid(g.affine(g.leaf(x), wi, bi)), 2);
    g.backward_from(mu, Tensord({1, 4}));  // all-zero seed
    for (size_t i = 0; i < g.grad(wi).numel(); ++i) CHECK(g.grad(wi)[i] == 0.0);
    for (size_t i = 0; i < g.grad(bi).numel(); ++i) CHECK(g.grad(bi)[i] == 0.0);
}

TEST_CASE("saturated routing (|z| = 30) keeps gradients finite") {
    Graph<double> g;
    const int depth = 3, nodes = kernels::tree_nodes(depth);
    Tensord w({2, nodes}), b({nodes}), x({1, 2});
    for (int n = 0; n < nodes; ++n) b[static_cast<size_t>(n)] = (n % 2 ? 30.0 : -30.0);
    int wi = g.leaf(w, true), bi = g.leaf(b, true);
    int mu = g.tree_leaf(g.sigmoid(g.affine(g.leaf(x), wi, bi)), depth);
    Tensord seed({1, kernels::tree_leaves(depth)});
    seed.fill(1.0);
    g.backward_from(mu, std::move(seed));
    const Tensord& dw = g.grad(wi);
    const Tensord& db = g.grad(bi);
    CHECK(dw.all_finite());
    CHECK(db.all_finite());
}

TEST_CASE("gate parameter counts at full scale") {
    CHECK(count_parameters(SoftmaxGateT<float>{Tensorf({2048, 128}), Tensorf({128})}) == 2048LL * 128 + 128);
    TreeGateT<float> t{7, Tensorf({2048, kernels::tree_nodes(7)}), Tensorf({kernels::tree_nodes(7)})};
    CHECK(count_parameters(t) == 127LL * 2049);
    CHECK(count_parameters(t) == 260223LL);
}
