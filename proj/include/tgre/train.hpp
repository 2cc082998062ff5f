// Stage-wise cascade training: Adam on the mean squared displacement
// residual, fresh augmentation each epoch, earlier stages frozen. Fully
// deterministic for a fixed seed.
#pragma once

#include "tgre/adam.hpp"
#include "tgre/dataio.hpp"

namespace tgre {

struct TrainConfig {
    AdamConfig adam;
    int epochs = 30;
    int batch = 64;
    AugmentConfig augment;
};

// Runs the first `stages` stages of the model on one image starting from
// `start` (used to place training samples at the frozen cascade's output).
Shape propagate_through(const CascadeModel& model, int stages, const Tensorf& image, const Shape& start);

// Trains stage `stage` in place; earlier stages must already be trained and
// are left untouched. Returns the per-epoch mean training loss.
std::vector<double> train_stage(CascadeModel& model, int stage, const std::vector<Sample>& data,
                                const TrainConfig& cfg, Rng& rng);

struct TrainReport {
    std::vector<std::vector<double>> stage_loss;  // [stage][epoch]
};

// Computes the mean shape from the data, then trains all stages sequentially.
TrainReport train_model(CascadeModel& model, const std::vector<Sample>& data, const TrainConfig& cfg, uint64_t seed);

// Epochs whose loss rose by more than rel_tol over the previous epoch
// (reported, not fatal; small bumps are normal with fresh augmentation).
int monotone_violations(const std::vector<double>& curve, double rel_tol = 0.05);

}  // namespace tgre
