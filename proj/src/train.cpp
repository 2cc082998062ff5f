#include "tgre/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tgre {

Shape propagate_through(const CascadeModel& model, int stages, const Tensorf& image, const Shape& start) {
    Shape cur = start;
    for (int k = 0; k < stages; ++k) {
        const Stage& stage = model.stages[static_cast<size_t>(k)];
        Tensorf patches = extract_patches(image, cur, model.cfg.patch_size);
        std::vector<float> feat = features_forward(stage.fe, model.cfg, patches);
        LayerOutput<float> out = layer_forward(stage.layer, std::span<const float>(feat));
        for (size_t i = 0; i < cur.xy.size(); ++i) cur.xy[i] += out.delta[i];
    }
    return cur;
}

std::vector<double> train_stage(CascadeModel& model, int stage_idx, const std::vector<Sample>& data,
                                const TrainConfig& cfg, Rng& rng) {
    if (stage_idx < 0 || stage_idx >= static_cast<int>(model.stages.size()))
        throw Error("train_stage: stage " + std::to_string(stage_idx) + " out of range");
    if (data.empty()) throw Error("train_stage: empty dataset");
    if (model.mean_shape.points() != model.cfg.landmarks)
        throw Error("train_stage: model mean shape unset; compute it from the data first");
    if (cfg.batch < 1) throw Error("train_stage: batch must be >= 1");
    for (const Sample& s : data)
        if (s.shape.points() != model.cfg.landmarks)
            throw Error("train_stage: sample " + s.id + " has " + std::to_string(s.shape.points()) +
                        " landmarks, model expects " + std::to_string(model.cfg.landmarks));

    Stage& stage = model.stages[static_cast<size_t>(stage_idx)];
    const ModelConfig& mc = model.cfg;
    const int P = mc.landmarks, p = mc.patch_size, out_dim = mc.out_dim();
    const float clamp_at = static_cast<float>(mc.image_size);

    std::vector<AdamState<float>> opt;
    for_each_param(stage, [&](const std::string&, Tensorf& t) { opt.emplace_back(t.shape); });

    std::vector<double> curve;
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch));
            const int B = static_cast<int>(end - begin);

            Tensorf patches({B * P, 1, p, p});
            Tensorf target({B, out_dim});
            for (int b = 0; b < B; ++b) {
                const Sample& s = data[static_cast<size_t>(order[begin + static_cast<size_t>(b)])];
                Shape s0 = augment_initial_shape(model.mean_shape, rng, cfg.augment);
                Shape cur = propagate_through(model, stage_idx, s.image, s0);
                Tensorf pp = extract_patches(s.image, cur, p);
                std::copy(pp.data.begin(), pp.data.end(),
                          patches.data.begin() + static_cast<size_t>(b) * pp.numel());
                for (int i = 0; i < out_dim; ++i)
                    target.at(b, i) = std::clamp(s.shape.xy[static_cast<size_t>(i)] - cur.xy[static_cast<size_t>(i)],
                                                 -clamp_at, clamp_at);
            }

            Graph<float> g;
            StageGraph<float> sg = build_stage(g, stage, mc, std::move(patches), &target);
            const double loss = g.value(sg.loss)[0];
            if (!std::isfinite(loss))
                throw Error("training diverged: non-finite loss at stage " + std::to_string(stage_idx) + " epoch " +
                            std::to_string(epoch) + "; try a lower learning rate (current " +
                            std::to_string(cfg.adam.lr) + ")");
            g.backward(sg.loss);

            size_t pi = 0;
            for_each_param(stage, [&](const std::string&, Tensorf& t) {
                opt[pi].step(t, g.grad(sg.param_ids[pi]), cfg.adam);
                ++pi;
            });

            epoch_loss += loss * B;
            seen += static_cast<size_t>(B);
        }
        curve.push_back(epoch_loss / static_cast<double>(seen));
    }
    return curve;
}

TrainReport train_model(CascadeModel& model, const std::vector<Sample>& data, const TrainConfig& cfg, uint64_t seed) {
    if (data.empty()) throw Error("train_model: empty dataset");
    std::vector<Shape> shapes;
    shapes.reserve(data.size());
    for (const Sample& s : data) shapes.push_back(s.shape);
    model.mean_shape = compute_mean_shape(shapes);

    Rng rng(seed);
    TrainReport report;
    for (int k = 0; k < static_cast<int>(model.stages.size()); ++k)
        report.stage_loss.push_back(train_stage(model, k, data, cfg, rng));
    return report;
}

int monotone_violations(const std::vector<double>& curve, double rel_tol) {
    int n = 0;
    for (size_t i = 1; i < curve.size(); ++i)
        if (curve[i] > curve[i - 1] * (1.0 + rel_tol)) ++n;
    return n;
}

}  // namespace tgre
