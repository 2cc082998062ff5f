// Evaluation toolkit: inter-pupil-normalized mean error, cumulative error
// distribution curves, gate concentration statistics, least-squares landmark
// mapping between annotation schemes, and CSV emitters for all of them.
#pragma once

#include <string>
#include <vector>

#include "tgre/dataio.hpp"

namespace tgre {

// Which two points define the normalizing distance. Negative indices mean
// automatic: for 68-point markups the pupil is approximated by the centroid
// of each eye's six contour landmarks, otherwise points 0 and 1 are used.
struct Normalizer {
    int a = -1;
    int b = -1;
};

double pupil_distance(const Shape& truth, const Normalizer& n);

// (1/P) sum ||pred_i - truth_i|| / d_pupil, times 100.
double nme(const Shape& pred, const Shape& truth, const Normalizer& n);

struct NmeResult {
    std::vector<double> per_sample;
    double mean = 0.0;
};

NmeResult evaluate_nme(const std::vector<Shape>& preds, const std::vector<Shape>& truths, const Normalizer& n);

// 100 evenly spaced thresholds across [0, 10] error units.
std::vector<std::pair<double, double>> ced_curve(const std::vector<double>& per_sample);

// ---- gate statistics ----

struct GateStats {
    std::vector<std::vector<double>> cumprob;  // [stage][rank], rank sorted by descending probability
};

// Mean over samples of the cumulative sum of one stage's descending-sorted
// gate vectors.
std::vector<double> cumulative_sorted_mean(const std::vector<std::vector<double>>& gates);

GateStats gate_cumulative(const CascadeModel& model, const std::vector<Sample>& data);

// ---- landmark mapping ----

struct LandmarkMap {
    int src_points = 0;
    int dst_points = 0;
    Tensorf a;              // [2*src_points, 2*dst_points]
    std::vector<float> c;   // [2*dst_points]

    Shape apply(const Shape& src) const;
};

// Least squares for dst ~ A*src + c over paired shapes. A singular normal
// system throws advising a ridge term.
LandmarkMap fit_landmark_map(const std::vector<Shape>& src, const std::vector<Shape>& dst, double ridge = 0.0);

double map_residual(const LandmarkMap& map, const std::vector<Shape>& src, const std::vector<Shape>& dst);

void save_landmark_map(const LandmarkMap& map, const std::string& path);
LandmarkMap load_landmark_map(const std::string& path);

// ---- trajectories ----

struct TrajectoryReport {
    std::vector<Shape> shapes;   // s^0 .. s^K
    std::vector<int> top_index;  // per stage, -1 for ungated variants
};

TrajectoryReport trajectory_report(const CascadeModel& model, const Tensorf& image, InferMode mode);
std::string format_trajectory(const TrajectoryReport& report);

// ---- CSV emitters (all with header rows, atomic writes) ----

void write_per_sample_csv(const std::string& path, const std::vector<std::string>& ids,
                          const std::vector<double>& errors);
void write_ced_csv(const std::string& path, const std::vector<std::pair<double, double>>& curve);
void write_gate_csv(const std::string& path, const GateStats& stats);

}  // namespace tgre
