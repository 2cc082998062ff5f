#include "tgre/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace tgre {
namespace {

// Solves (M + ridge*I) X = B in place via Cholesky; M is n x n symmetric
// positive definite, B is n x m. Throws on a non-positive pivot.
void solve_spd(std::vector<double>& m, std::vector<double>& b, int n, int cols, double ridge) {
    for (int i = 0; i < n; ++i) m[static_cast<size_t>(i) * n + i] += ridge;
    std::vector<double> chol(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = m[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < j; ++k) s -= chol[static_cast<size_t>(i) * n + k] * chol[static_cast<size_t>(j) * n + k];
            if (i == j) {
                if (s < 1e-10)
                    throw Error("fit_landmark_map: rank-deficient system; pass a ridge term (ridge > 0)");
                chol[static_cast<size_t>(i) * n + j] = std::sqrt(s);
            } else {
                chol[static_cast<size_t>(i) * n + j] = s / chol[static_cast<size_t>(j) * n + j];
            }
        }
    }
    // forward then back substitution per column of B
    for (int col = 0; col < cols; ++col) {
        for (int i = 0; i < n; ++i) {
            double s = b[static_cast<size_t>(i) * cols + col];
            for (int k = 0; k < i; ++k) s -= chol[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k) * cols + col];
            b[static_cast<size_t>(i) * cols + col] = s / chol[static_cast<size_t>(i) * n + i];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = b[static_cast<size_t>(i) * cols + col];
            for (int k = i + 1; k < n; ++k) s -= chol[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k) * cols + col];
            b[static_cast<size_t>(i) * cols + col] = s / chol[static_cast<size_t>(i) * n + i];
        }
    }
}

}  // namespace

double pupil_distance(const Shape& truth, const Normalizer& n) {
    int a = n.a, b = n.b;
    double ax, ay, bx, by;
    if (a < 0 || b < 0) {
        if (truth.points() == 68) {
            // centroids of the six contour landmarks of each eye
            ax = ay = bx = by = 0.0;
            for (int i = 36; i < 42; ++i) {
                ax += truth.x(i) / 6.0;
                ay += truth.y(i) / 6.0;
            }
            for (int i = 42; i < 48; ++i) {
                bx += truth.x(i) / 6.0;
                by += truth.y(i) / 6.0;
            }
            return std::hypot(ax - bx, ay - by);
        }
        a = 0;
        b = 1;
    }
    if (a >= truth.points() || b >= truth.points())
        throw Error("normalizer landmarks (" + std::to_string(a) + "," + std::to_string(b) + ") out of range for " +
                    std::to_string(truth.points()) + " points");
    return std::hypot(static_cast<double>(truth.x(a)) - truth.x(b), static_cast<double>(truth.y(a)) - truth.y(b));
}

double nme(const Shape& pred, const Shape& truth, const Normalizer& n) {
    if (pred.points() != truth.points())
        throw Error("nme: landmark count mismatch (" + std::to_string(pred.points()) + " vs " +
                    std::to_string(truth.points()) + "); fit a landmark map to compare");
    const double d = pupil_distance(truth, n);
    if (!(d > 0.0)) throw Error("nme: zero inter-pupil distance");
    double sum = 0.0;
    const int P = pred.points();
    for (int i = 0; i < P; ++i)
        sum += std::hypot(static_cast<double>(pred.x(i)) - truth.x(i), static_cast<double>(pred.y(i)) - truth.y(i));
    return 100.0 * sum / (P * d);
}

NmeResult evaluate_nme(const std::vector<Shape>& preds, const std::vector<Shape>& truths, const Normalizer& n) {
    if (preds.size() != truths.size())
        throw Error("evaluate_nme: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(truths.size()) + " ground-truth shapes");
    if (preds.empty()) throw Error("evaluate_nme: empty evaluation set");
    NmeResult r;
    double acc = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        r.per_sample.push_back(nme(preds[i], truths[i], n));
        acc += r.per_sample.back();
    }
    r.mean = acc / static_cast<double>(preds.size());
    return r;
}

std::vector<std::pair<double, double>> ced_curve(const std::vector<double>& per_sample) {
    std::vector<std::pair<double, double>> curve;
    const double n = static_cast<double>(per_sample.size());
    for (int i = 0; i < 100; ++i) {
        const double thr = 10.0 * i / 99.0;
        size_t hit = 0;
        for (double e : per_sample)
            if (e <= thr) ++hit;
        curve.emplace_back(thr, n > 0 ? hit / n : 0.0);
    }
    return curve;
}

std::vector<double> cumulative_sorted_mean(const std::vector<std::vector<double>>& gates) {
    if (gates.empty()) throw Error("cumulative_sorted_mean: no gate vectors");
    const size_t L = gates[0].size();
    std::vector<double> mean(L, 0.0);
    for (const auto& g : gates) {
        if (g.size() != L) throw Error("cumulative_sorted_mean: ragged gate vectors");
        std::vector<double> sorted = g;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        double run = 0.0;
        for (size_t r = 0; r < L; ++r) {
            run += sorted[r];
            mean[r] += run / static_cast<double>(gates.size());
        }
    }
    return mean;
}

GateStats gate_cumulative(const CascadeModel& model, const std::vector<Sample>& data) {
    if (model.stages.empty() || !model.stages[0].layer.gated())
        throw Error("gate statistics need a gated model; variant " + std::string(variant_name(model.cfg.variant)) +
                    " has no gate");
    if (data.empty()) throw Error("gate_cumulative: empty dataset");
    const int K = model.cfg.stages;
    std::vector<std::vector<std::vector<double>>> per_stage(static_cast<size_t>(K));
    for (const Sample& s : data) {
        Prediction pred = cascade_predict(model, s.image, InferMode::Full);
        for (int k = 0; k < K; ++k) {
            const GateVector& g = pred.gates[static_cast<size_t>(k)];
            per_stage[static_cast<size_t>(k)].emplace_back(g.p.begin(), g.p.end());
        }
    }
    GateStats stats;
    for (int k = 0; k < K; ++k) stats.cumprob.push_back(cumulative_sorted_mean(per_stage[static_cast<size_t>(k)]));
    return stats;
}

Shape LandmarkMap::apply(const Shape& src) const {
    if (src.points() != src_points)
        throw Error("landmark map expects " + std::to_string(src_points) + " points, got " +
                    std::to_string(src.points()));
    const int n = 2 * src_points, m = 2 * dst_points;
    Shape out(dst_points);
    for (int j = 0; j < m; ++j) {
        double s = c[static_cast<size_t>(j)];
        for (int i = 0; i < n; ++i) s += static_cast<double>(a[static_cast<size_t>(i) * m + j]) * src.xy[static_cast<size_t>(i)];
        out.xy[static_cast<size_t>(j)] = static_cast<float>(s);
    }
    return out;
}

LandmarkMap fit_landmark_map(const std::vector<Shape>& src, const std::vector<Shape>& dst, double ridge) {
    if (src.size() != dst.size() || src.empty()) throw Error("fit_landmark_map: need matching non-empty shape lists");
    const int n = 2 * src[0].points() + 1;  // augmented with the constant column
    const int m = 2 * dst[0].points();
    for (size_t s = 0; s < src.size(); ++s) {
        if (2 * src[s].points() + 1 != n || 2 * dst[s].points() != m)
            throw Error("fit_landmark_map: inconsistent landmark counts at pair " + std::to_string(s));
    }
    // normal equations on the augmented design matrix
    std::vector<double> xtx(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> xty(static_cast<size_t>(n) * m, 0.0);
    std::vector<double> row(static_cast<size_t>(n), 1.0);
    for (size_t s = 0; s < src.size(); ++s) {
        for (int i = 0; i + 1 < n; ++i) row[static_cast<size_t>(i)] = src[s].xy[static_cast<size_t>(i)];
        row[static_cast<size_t>(n) - 1] = 1.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) xtx[static_cast<size_t>(i) * n + j] += row[static_cast<size_t>(i)] * row[static_cast<size_t>(j)];
            for (int j = 0; j < m; ++j) xty[static_cast<size_t>(i) * m + j] += row[static_cast<size_t>(i)] * dst[s].xy[static_cast<size_t>(j)];
        }
    }
    solve_spd(xtx, xty, n, m, ridge);

    LandmarkMap map;
    map.src_points = (n - 1) / 2;
    map.dst_points = m / 2;
    map.a = Tensorf({n - 1, m});
    map.c.resize(static_cast<size_t>(m));
    for (int i = 0; i + 1 < n; ++i)
        for (int j = 0; j < m; ++j) map.a[static_cast<size_t>(i) * m + j] = static_cast<float>(xty[static_cast<size_t>(i) * m + j]);
    for (int j = 0; j < m; ++j) map.c[static_cast<size_t>(j)] = static_cast<float>(xty[(static_cast<size_t>(n) - 1) * m + j]);
    return map;
}

double map_residual(const LandmarkMap& map, const std::vector<Shape>& src, const std::vector<Shape>& dst) {
    if (src.size() != dst.size() || src.empty()) throw Error("map_residual: need matching non-empty shape lists");
    double acc = 0.0;
    for (size_t s = 0; s < src.size(); ++s) {
        Shape mapped = map.apply(src[s]);
        for (size_t i = 0; i < mapped.xy.size(); ++i) {
            const double d = static_cast<double>(mapped.xy[i]) - dst[s].xy[i];
            acc += d * d;
        }
    }
    return acc;
}

void save_landmark_map(const LandmarkMap& map, const std::string& path) {
    std::ostringstream out;
    out << "TGRE-MAP 1\n" << map.src_points << " " << map.dst_points << "\n";
    out.precision(9);
    for (size_t i = 0; i < map.a.numel(); ++i) out << map.a[i] << (i + 1 == map.a.numel() ? "\n" : " ");
    for (size_t i = 0; i < map.c.size(); ++i) out << map.c[i] << (i + 1 == map.c.size() ? "\n" : " ");
    write_text_atomic(path, out.str());
}

LandmarkMap load_landmark_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "TGRE-MAP" || version != 1) throw Error(path + ": not a landmark map file");
    LandmarkMap map;
    in >> map.src_points >> map.dst_points;
    if (map.src_points < 1 || map.dst_points < 1) throw Error(path + ": bad landmark counts");
    map.a = Tensorf({2 * map.src_points, 2 * map.dst_points});
    map.c.resize(static_cast<size_t>(2 * map.dst_points));
    for (size_t i = 0; i < map.a.numel(); ++i) in >> map.a[i];
    for (size_t i = 0; i < map.c.size(); ++i) in >> map.c[i];
    if (!in) throw Error(path + ": truncated landmark map");
    return map;
}

TrajectoryReport trajectory_report(const CascadeModel& model, const Tensorf& image, InferMode mode) {
    Prediction pred = cascade_predict(model, image, mode);
    return {std::move(pred.trajectory), std::move(pred.top_index)};
}

std::string format_trajectory(const TrajectoryReport& report) {
    std::ostringstream out;
    out.precision(3);
    out << std::fixed;
    for (size_t k = 0; k < report.shapes.size(); ++k) {
        out << "s" << k;
        if (k > 0) {
            const int idx = report.top_index[k - 1];
            if (idx >= 0) out << " (top regressor " << idx << ")";
        }
        out << ":";
        const Shape& s = report.shapes[k];
        for (int i = 0; i < s.points(); ++i) out << " (" << s.x(i) << "," << s.y(i) << ")";
        out << "\n";
    }
    return out.str();
}

void write_per_sample_csv(const std::string& path, const std::vector<std::string>& ids,
                          const std::vector<double>& errors) {
    if (ids.size() != errors.size()) throw Error("write_per_sample_csv: id/error length mismatch");
    std::ostringstream out;
    out << "id,error\n";
    out.precision(9);
    for (size_t i = 0; i < ids.size(); ++i) out << ids[i] << "," << errors[i] << "\n";
    write_text_atomic(path, out.str());
}

void write_ced_csv(const std::string& path, const std::vector<std::pair<double, double>>& curve) {
    std::ostringstream out;
    out << "threshold,fraction\n";
    out.precision(9);
    for (const auto& [thr, frac] : curve) out << thr << "," << frac << "\n";
    write_text_atomic(path, out.str());
}

void write_gate_csv(const std::string& path, const GateStats& stats) {
    std::ostringstream out;
    out << "stage,rank,cumprob\n";
    out.precision(9);
    for (size_t k = 0; k < stats.cumprob.size(); ++k)
        for (size_t r = 0; r < stats.cumprob[k].size(); ++r)
            out << (k + 1) << "," << (r + 1) << "," << stats.cumprob[k][r] << "\n";
    write_text_atomic(path, out.str());
}

}  // namespace tgre
