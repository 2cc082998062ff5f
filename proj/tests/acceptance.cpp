// Acceptance suite: nine go/no-go checks covering gate algebra, gradients,
// full-scale parameter audits, end-to-end training on synthetic data, greedy
// inference, reproducibility and gate statistics. Each criterion prints one
// PASS/FAIL line; the process exits nonzero if any hard check fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "tgre/config.hpp"
#include "tgre/rng.hpp"

using namespace tgre;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int n, bool ok, const std::string& what) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << what << "\n";
    std::cout.flush();
    if (!ok) ++g_failures;
}

double secs_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(prec);
    ss << v;
    return ss.str();
}

// independent path-product oracle: walk from the root reading the leaf index
// bits top-down, multiplying the left (d) or right (1-d) routing probability
std::vector<double> path_product_oracle(const std::vector<double>& d, int depth) {
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

template <typename T>
TreeGateT<T> random_tree(int feature_dim, int depth, Rng& rng, double scale) {
    TreeGateT<T> g{depth, Tensor<T>({feature_dim, kernels::tree_nodes(depth)}),
                   Tensor<T>({kernels::tree_nodes(depth)})};
    for (size_t i = 0; i < g.w.numel(); ++i) g.w[i] = static_cast<T>(rng.uniform(-scale, scale));
    for (size_t i = 0; i < g.b.numel(); ++i) g.b[i] = static_cast<T>(rng.uniform(-scale, scale));
    return g;
}

Tensorf stack_patches(const std::vector<Tensorf>& per_sample) {
    const int P = per_sample[0].dim(0), p = per_sample[0].dim(2);
    Tensorf out({static_cast<int>(per_sample.size()) * P, 1, p, p});
    size_t off = 0;
    for (const Tensorf& t : per_sample) {
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<long>(off));
        off += t.numel();
    }
    return out;
}

void randomize_stage(Stage& stage, Rng& rng) {
    for_each_param(stage, [&](const std::string&, Tensorf& t) {
        for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-0.1, 0.1));
    });
}

// ---- criterion 1: gate normalization over many random trees ----

void criterion_1() {
    const auto t0 = Clock::now();
    Rng rng(101);
    int trees = 0;
    float max_dev = 0.0f;
    bool in_range = true;
    for (int t = 0; t < 1050; ++t) {
        const int depth = 1 + t % 7;
        const int f = 3 + static_cast<int>(rng.below(38));
        NeuralTreeGate g = random_tree<float>(f, depth, rng, 1.5);
        std::vector<float> x(static_cast<size_t>(f));
        for (float& v : x) v = static_cast<float>(rng.uniform(-3.0, 3.0));
        GateVec<float> mu = leaf_probabilities(g, std::span<const float>(x));
        float sum = 0.0f;
        for (float m : mu.p) {
            sum += m;
            if (!(m >= 0.0f && m <= 1.0f)) in_range = false;
        }
        max_dev = std::max(max_dev, std::abs(sum - 1.0f));
        ++trees;
    }
    const double dt = secs_since(t0);
    const bool ok = trees >= 1000 && in_range && max_dev < 1e-6f && dt < 10.0;
    report(1, ok,
           "leaf probabilities of " + std::to_string(trees) + " random trees (depths 1-7) sum to 1 " +
               "(max |sum-1| " + fmt(max_dev, 9) + ", tol 1e-6, all in [0,1], " + fmt(dt, 1) + "s)");
}

// ---- criterion 2: recursive routing equals the explicit path product ----

void criterion_2() {
    const auto t0 = Clock::now();
    Rng rng(202);
    double max_diff = 0.0;
    int cases = 0;
    for (int depth = 1; depth <= 5; ++depth) {
        for (int t = 0; t < 40; ++t) {
            const int f = 4 + static_cast<int>(rng.below(12));
            TreeGateT<double> g = random_tree<double>(f, depth, rng, 2.0);
            std::vector<double> x(static_cast<size_t>(f));
            for (double& v : x) v = rng.uniform(-2.0, 2.0);
            std::vector<double> d;
            for (int n = 0; n < kernels::tree_nodes(depth); ++n)
                d.push_back(routing_prob(g, n, std::span<const double>(x)));
            const std::vector<double> want = path_product_oracle(d, depth);
            GateVec<double> mu = leaf_probabilities(g, std::span<const double>(x));
            for (size_t i = 0; i < want.size(); ++i)
                max_diff = std::max(max_diff, std::abs(mu.p[i] - want[i]));
            ++cases;
        }
    }
    const double dt = secs_since(t0);
    const bool ok = cases == 200 && max_diff < 1e-12 && dt < 10.0;
    report(2, ok, "leaf probabilities match the path-product oracle on 200 cases, depths 1-5 " +
                      std::string("(max diff ") + fmt(max_diff, 15) + ", tol 1e-12, " + fmt(dt, 1) + "s)");
}

// ---- criterion 3: end-to-end stage gradient check ----

void criterion_3() {
    const auto t0 = Clock::now();
    ModelConfig cfg;  // desk-scale defaults
    cfg.variant = Variant::TreeGRE;
    CascadeModel model = init_model(cfg, 31);
    Rng rng(303);
    randomize_stage(model.stages[0], rng);
    const Stage& stage = model.stages[0];

    const int B = 2;
    Shape sh(std::vector<float>{20, 24, 44, 24, 32, 36, 24, 48, 40, 48});
    std::vector<Tensorf> per;
    for (int b = 0; b < B; ++b) {
        Tensorf img({cfg.image_size, cfg.image_size});
        for (size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
        per.push_back(extract_patches(img, sh, cfg.patch_size));
    }
    Tensorf patches = stack_patches(per);
    Tensorf target({B, cfg.out_dim()});
    for (size_t i = 0; i < target.numel(); ++i) target[i] = static_cast<float>(rng.uniform(-1.0, 1.0));

    Graph<float> gf;
    StageGraph<float> sgf = build_stage(gf, stage, cfg, patches, &target);
    gf.backward(sgf.loss);

    StageT<double> sd = stage.cast<double>();
    Tensord patches_d = patches.cast<double>();
    Tensord target_d = target.cast<double>();
    auto eval = [&]() {
        Graph<double> g;
        StageGraph<double> sg = build_stage(g, sd, cfg, patches_d, &target_d);
        return g.value(sg.loss)[0];
    };
    Graph<double> gd;
    StageGraph<double> sgd = build_stage(gd, sd, cfg, patches_d, &target_d);
    gd.backward(sgd.loss);

    std::vector<Tensord*> params;
    for_each_param(sd, [&](const std::string&, Tensord& t) { params.push_back(&t); });

    // The loss is piecewise smooth (relu), so a central difference that
    // straddles a kink is meaningless; a sample is trusted only when two step
    // sizes agree, and is otherwise replaced (or retried at a smaller step
    // when the tensor is too small to resample). Entries below the
    // difference-quotient noise floor get an absolute check at that scale
    // instead of a relative one.
    const double h = 1e-5;
    double max_rf = 0.0, max_rd = 0.0, max_abs_d = 0.0;
    int checked = 0, unresolved = 0;
    bool coverage = true;
    auto central = [&](Tensord& p, size_t i, double step) {
        const double keep = p[i];
        p[i] = keep + step;
        const double lp = eval();
        p[i] = keep - step;
        const double lm = eval();
        p[i] = keep;
        return (lp - lm) / (2 * step);
    };
    auto consistent = [](double a, double b) {
        return std::abs(a - b) <= 1e-7 * std::max(std::abs(a), 1e-2);
    };
    for (size_t t = 0; t < params.size(); ++t) {
        const Tensorf& an_f = gf.grad(sgf.param_ids[t]);
        const Tensord& an_d = gd.grad(sgd.param_ids[t]);
        Tensord& p = *params[t];
        auto take = [&](double fd, size_t i, double mag_floor) {
            ++checked;
            if (std::max(std::abs(fd), std::abs(an_d[i])) >= mag_floor) {
                max_rd = std::max(max_rd, std::abs(fd - an_d[i]) /
                                              std::max(std::abs(fd), std::abs(an_d[i])));
                max_rf = std::max(max_rf, std::abs(fd - static_cast<double>(an_f[i])) /
                                              std::max({std::abs(fd), std::abs(static_cast<double>(an_f[i])), 1e-3}));
            } else {
                max_abs_d = std::max(max_abs_d, std::abs(fd - an_d[i]));
                max_abs_d = std::max(max_abs_d, std::abs(fd - static_cast<double>(an_f[i])));
            }
        };
        if (p.numel() <= 20) {
            int skipped = 0;
            for (size_t i = 0; i < p.numel(); ++i) {
                const double fd1 = central(p, i, h);
                const double fd8 = central(p, i, h / 8);
                if (consistent(fd1, fd8)) {
                    take(fd1, i, 2e-5);
                } else {
                    const double fd64 = central(p, i, h / 64);  // step around the kink
                    if (consistent(fd8, fd64))
                        take(fd8, i, 1e-4);
                    else
                        ++skipped;
                }
            }
            unresolved += skipped;
            if (skipped > 2) coverage = false;
        } else {
            int done = 0, draws = 0;
            std::set<size_t> seen;
            while (done < 20 && draws < 200) {
                ++draws;
                const size_t i = rng.below(p.numel());
                if (seen.count(i)) continue;
                const double fd1 = central(p, i, h);
                const double fd8 = central(p, i, h / 8);
                if (!consistent(fd1, fd8)) continue;
                seen.insert(i);
                ++done;
                take(fd1, i, 2e-5);
            }
            if (done < 20) coverage = false;
        }
    }
    const double dt = secs_since(t0);
    const bool ok = coverage && max_rf < 1e-4 && max_rd < 1e-6 && max_abs_d < 1e-6 && dt < 120.0;
    report(3, ok, "stage MSE gradients vs central differences on " + std::to_string(checked) +
                      " parameters across " + std::to_string(params.size()) + " tensors (single rel " +
                      fmt(max_rf, 8) + " < 1e-4, double rel " + fmt(max_rd, 9) + " < 1e-6, small-entry abs " +
                      fmt(max_abs_d, 9) + " < 1e-6, " + std::to_string(unresolved) +
                      " kink-straddling entries skipped, " + fmt(dt, 1) + "s)");
}

// ---- criterion 4: full-scale shape and size audit ----

ModelConfig full_scale_config(Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.stages = 4;
    cfg.landmarks = 68;
    cfg.image_size = 150;
    cfg.patch_size = 32;
    cfg.conv_channels = {20, 40, 80, 160, 30};
    cfg.conv_kernels = {5, 5, 3, 3, 1};
    cfg.conv_strides = {2, 2, 2, 2, 1};
    cfg.fc_dim = 2048;
    cfg.ensemble_size = 128;
    cfg.hidden = 40;
    cfg.tree_depth = 7;
    return cfg;
}

void criterion_4() {
    ModelConfig tree = full_scale_config(Variant::TreeGRE);
    const long long total = count_model_parameters(tree);
    const double rel_total = std::abs(static_cast<double>(total) - 114e6) / 114e6;

    ModelConfig sr = full_scale_config(Variant::SR);
    sr.hidden = tree.hidden * tree.ensemble_size;  // one wide regressor, matched capacity
    ModelConfig re = full_scale_config(Variant::RE);
    const long long n_sr = count_regression_parameters(sr);
    const long long n_re = count_regression_parameters(re);
    const double rel_layer = std::abs(static_cast<double>(n_sr - n_re)) / static_cast<double>(n_re);

    const bool ok = tree.concat_dim() == 8160 && tree.fc_dim == 2048 && rel_total < 0.02 &&
                    rel_layer < 0.002;
    report(4, ok, "full scale: concat " + std::to_string(tree.concat_dim()) + " (want 8160), fc " +
                      std::to_string(tree.fc_dim) + ", 4-stage total " + std::to_string(total) +
                      " within " + fmt(100 * rel_total, 2) + "% of 114M, single-vs-ensemble layer diff " +
                      fmt(100 * rel_layer, 3) + "% < 0.2%");
}

// ---- criterion 5: synthetic end-to-end training, all four variants ----

struct TrainedVariants {
    RunConfig rc;
    std::vector<Sample> eval_data;
    std::vector<Shape> truths;
    Normalizer norm;
    double baseline = 0.0;
    CascadeModel tree_model;  // reused by criteria 7 and 9
    bool have_tree = false;
};

TrainedVariants criterion_5() {
    const auto t0 = Clock::now();
    TrainedVariants out;
    RunConfig& rc = out.rc;  // desk defaults: 512 train / 200 eval samples, 30 epochs
    SyntheticSpec spec = make_synth_spec(rc);
    std::vector<Sample> train_data = synthetic_dataset(spec, rc.train_count);
    out.eval_data = synthetic_dataset(spec, rc.eval_count, kEvalIndexBase);
    for (const Sample& s : out.eval_data) out.truths.push_back(s.shape);
    out.norm = make_normalizer(rc);

    std::vector<Shape> train_shapes;
    for (const Sample& s : train_data) train_shapes.push_back(s.shape);
    const Shape mean = compute_mean_shape(train_shapes);
    out.baseline = evaluate_nme(std::vector<Shape>(out.truths.size(), mean), out.truths, out.norm).mean;

    bool ok = true;
    std::string detail;
    for (Variant v : {Variant::SR, Variant::RE, Variant::SoftGRE, Variant::TreeGRE}) {
        RunConfig cfg = rc;
        cfg.model.variant = v;
        CascadeModel model = init_model(cfg.model, cfg.seed);
        train_model(model, train_data, cfg.train, cfg.seed);
        std::vector<Shape> preds;
        for (const Sample& s : out.eval_data) preds.push_back(cascade_predict(model, s.image).final_shape());
        const double nme = evaluate_nme(preds, out.truths, out.norm).mean;
        if (!(nme <= 0.5 * out.baseline)) ok = false;
        detail += std::string(variant_name(v)) + " " + fmt(nme) + " ";
        if (v == Variant::TreeGRE) {
            out.tree_model = std::move(model);
            out.have_tree = true;
        }
    }
    const double dt = secs_since(t0);
    ok = ok && dt < 900.0;
    report(5, ok, "trained NME " + detail + "vs mean-shape baseline " + fmt(out.baseline) +
                      " (each must be <= 50%, " + fmt(dt, 0) + "s)");
    return out;
}

// ---- criterion 6: zeroed tree gate reproduces the plain ensemble ----

void criterion_6() {
    ModelConfig cfg;
    cfg.variant = Variant::TreeGRE;
    CascadeModel model = init_model(cfg, 66);
    Rng rng(606);
    randomize_stage(model.stages[0], rng);
    RegressionLayer tree = model.stages[0].layer;
    tree.tree_gate.w.fill(0.0f);
    tree.tree_gate.b.fill(0.0f);
    RegressionLayer re;
    re.variant = Variant::RE;
    re.regressors = tree.regressors;

    float max_diff = 0.0f;
    for (int t = 0; t < 100; ++t) {
        std::vector<float> x(static_cast<size_t>(cfg.fc_dim));
        for (float& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const std::vector<float> a = layer_forward(tree, std::span<const float>(x)).delta;
        const std::vector<float> b = layer_forward(re, std::span<const float>(x)).delta;
        for (size_t i = 0; i < a.size(); ++i)
            max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    }
    report(6, max_diff < 1e-10f, "tree ensemble with zeroed gate equals the unweighted ensemble on "
                                 "100 inputs (max diff " + fmt(max_diff, 12) + ", tol 1e-10)");
}

// ---- criterion 7: greedy inference work and saturated-gate agreement ----

void criterion_7(const TrainedVariants& tv) {
    const auto t0 = Clock::now();
    if (!tv.have_tree) {
        report(7, false, "skipped: no trained tree model available");
        return;
    }
    const CascadeModel& model = tv.tree_model;
    const uint64_t n = tv.eval_data.size();
    const uint64_t K = static_cast<uint64_t>(model.cfg.stages);
    const uint64_t L = static_cast<uint64_t>(model.cfg.ensemble_size);

    EvalCounters::reset();
    for (const Sample& s : tv.eval_data) cascade_predict(model, s.image, InferMode::Top1);
    const uint64_t greedy_evals = EvalCounters::weak_evals;
    EvalCounters::reset();
    for (const Sample& s : tv.eval_data) cascade_predict(model, s.image, InferMode::Full);
    const uint64_t full_evals = EvalCounters::weak_evals;

    CascadeModel hot = model;
    for (Stage& st : hot.stages) st.layer.tree_gate.b.fill(40.0f);  // one-hot routing
    std::vector<Shape> pf, pg;
    for (const Sample& s : tv.eval_data) {
        pf.push_back(cascade_predict(hot, s.image, InferMode::Full).final_shape());
        pg.push_back(cascade_predict(hot, s.image, InferMode::Top1).final_shape());
    }
    const double nme_full = evaluate_nme(pf, tv.truths, tv.norm).mean;
    const double nme_greedy = evaluate_nme(pg, tv.truths, tv.norm).mean;
    const double gap = std::abs(nme_full - nme_greedy);

    const double dt = secs_since(t0);
    const bool ok = greedy_evals == n * K && full_evals == n * K * L && gap < 1e-4 && dt < 30.0;
    report(7, ok, "greedy pass ran " + std::to_string(greedy_evals) + " weak evaluations (" +
                      std::to_string(n) + " samples x " + std::to_string(K) + " stages), full ran " +
                      std::to_string(full_evals) + "; saturated-gate NME gap " + fmt(gap, 7) +
                      " < 1e-4 (" + fmt(dt, 1) + "s)");
}

// ---- criterion 8: reproducibility and file integrity ----

void criterion_8() {
    const auto t0 = Clock::now();
    fs::path dir = fs::temp_directory_path() / ("tgre-acc-" + std::to_string(::getpid()));
    fs::create_directories(dir);

    RunConfig rc;
    rc.model.variant = Variant::TreeGRE;
    rc.train.epochs = 2;
    rc.train.batch = 32;
    rc.train_count = 64;
    SyntheticSpec spec = make_synth_spec(rc);
    std::vector<Sample> data = synthetic_dataset(spec, rc.train_count);

    auto run_once = [&](const std::string& name) {
        CascadeModel m = init_model(rc.model, rc.seed);
        train_model(m, data, rc.train, rc.seed);
        save_model(m, (dir / name).string());
        return m;
    };
    CascadeModel m1 = run_once("a.bin");
    run_once("b.bin");
    auto bytes = [&](const std::string& name) {
        std::ifstream in(dir / name, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    const std::string blob_a = bytes("a.bin");
    const bool identical = !blob_a.empty() && blob_a == bytes("b.bin");

    CascadeModel back = load_model((dir / "a.bin").string());
    bool roundtrip = back.mean_shape.xy == m1.mean_shape.xy && back.stages.size() == m1.stages.size();
    for (size_t k = 0; roundtrip && k < m1.stages.size(); ++k) {
        std::vector<const Tensorf*> ta, tb;
        for_each_param(m1.stages[k], [&](const std::string&, const Tensorf& t) { ta.push_back(&t); });
        for_each_param(back.stages[k], [&](const std::string&, const Tensorf& t) { tb.push_back(&t); });
        roundtrip = ta.size() == tb.size();
        for (size_t i = 0; roundtrip && i < ta.size(); ++i) roundtrip = ta[i]->data == tb[i]->data;
    }
    if (roundtrip) {
        const Prediction p1 = cascade_predict(m1, data[0].image);
        const Prediction p2 = cascade_predict(back, data[0].image);
        roundtrip = p1.final_shape().xy == p2.final_shape().xy;
    }

    std::string corrupt = blob_a;
    corrupt[corrupt.size() / 2] = static_cast<char>(corrupt[corrupt.size() / 2] ^ 0x40);
    std::ofstream(dir / "c.bin", std::ios::binary) << corrupt;
    bool detected = false;
    try {
        load_model((dir / "c.bin").string());
    } catch (const Error&) {
        detected = true;
    }
    fs::remove_all(dir);

    const double dt = secs_since(t0);
    const bool ok = identical && roundtrip && detected && dt < 120.0;
    report(8, ok, std::string("same config+seed gives byte-identical files (") +
                      (identical ? "yes" : "NO") + "), save/load round trip bit-exact (" +
                      (roundtrip ? "yes" : "NO") + "), single-byte corruption detected (" +
                      (detected ? "yes" : "NO") + ") (" + fmt(dt, 1) + "s)");
}

// ---- criterion 9: gate statistics shape and cross-stage pattern ----

void criterion_9(const TrainedVariants& tv) {
    if (!tv.have_tree) {
        report(9, false, "skipped: no trained tree model available");
        return;
    }
    GateStats stats = gate_cumulative(tv.tree_model, tv.eval_data);
    bool monotone = true, ends_at_one = true;
    for (const std::vector<double>& curve : stats.cumprob) {
        for (size_t r = 1; r < curve.size(); ++r)
            if (curve[r] < curve[r - 1] - 1e-12) monotone = false;
        if (std::abs(curve.back() - 1.0) > 1e-4) ends_at_one = false;
    }
    const int L = tv.tree_model.cfg.ensemble_size;
    const size_t rank = static_cast<size_t>(std::ceil(0.1 * L)) - 1;  // rank ceil(0.1 L), 0-based
    const double s1 = stats.cumprob.front()[rank];
    const double s2 = stats.cumprob.back()[rank];
    const bool dominates = s1 >= s2;

    const bool ok = monotone && ends_at_one;  // the cross-stage pattern is reported, not enforced
    std::string pattern = dominates
                              ? "first stage concentrates gate mass at least as much as the last (" +
                                    fmt(s1) + " >= " + fmt(s2) + " at rank " + std::to_string(rank + 1) + ")"
                              : "note: first-stage gate mass " + fmt(s1) + " < last-stage " + fmt(s2) +
                                    " at rank " + std::to_string(rank + 1) + " (reported, not enforced)";
    report(9, ok, "gate cumulative curves monotone and ending at 1 within 1e-4; " + pattern);
}

}  // namespace

int main() {
    std::cout << "acceptance suite: tree-gated deep regressor cascade\n";
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    TrainedVariants tv = criterion_5();
    criterion_6();
    criterion_7(tv);
    criterion_8();
    criterion_9(tv);
    if (g_failures == 0) {
        std::cout << "all 9 criteria passed\n";
        return 0;
    }
    std::cout << g_failures << " criterion(s) failed\n";
    return 1;
}
