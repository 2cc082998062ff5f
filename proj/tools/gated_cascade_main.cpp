// Command-line front end: train/eval/predict plus the ablation harness, gate
// analysis, landmark-map fitting and synthetic dataset emission.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tgre/config.hpp"
#include "tgre/parallel.hpp"

using namespace tgre;

namespace {

struct Flags {
    std::string config_path;
    std::string out;
    std::string model_path;
    std::string map_path;
    std::string variant;
    std::string image_path;
    std::string src_dir, dst_dir;
    std::string variants_csv;
    uint64_t seed = 0;
    bool seed_set = false;
    bool top1 = false;
    bool force = false;
    bool oracle = false;
    int count = -1;
    double ridge = 0.0;
};

RunConfig load_run_config(const Flags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : parse_config_file(f.config_path);
    if (f.seed_set) cfg.seed = f.seed;
    if (!f.variant.empty()) cfg.model.variant = parse_variant(f.variant);
    cfg.validate();
    return cfg;
}

// Held-out split: synthetic sources draw disjoint index ranges; directory
// sources reserve the last fifth (at least one sample).
std::vector<Sample> train_split(const RunConfig& cfg) {
    if (cfg.data == "synthetic") return synthetic_dataset(make_synth_spec(cfg), cfg.train_count, 0);
    std::vector<Sample> all = load_dataset_dir(cfg.data);
    const size_t hold = std::max<size_t>(1, all.size() / 5);
    if (all.size() <= hold) throw Error("dataset " + cfg.data + " too small to split");
    all.resize(all.size() - hold);
    return all;
}

std::vector<Sample> eval_split(const RunConfig& cfg) {
    if (cfg.data == "synthetic") return synthetic_dataset(make_synth_spec(cfg), cfg.eval_count, kEvalIndexBase);
    std::vector<Sample> all = load_dataset_dir(cfg.data);
    const size_t hold = std::max<size_t>(1, all.size() / 5);
    if (all.size() <= hold) throw Error("dataset " + cfg.data + " too small to split");
    return {all.end() - static_cast<long>(hold), all.end()};
}

void refuse_overwrite(const std::string& path, bool force) {
    if (!force && std::filesystem::exists(path))
        throw Error(path + " exists; pass --force to overwrite");
}

void write_loss_csv(const std::string& path, const TrainReport& report) {
    std::string csv = "stage,epoch,loss\n";
    char buf[64];
    for (size_t k = 0; k < report.stage_loss.size(); ++k)
        for (size_t e = 0; e < report.stage_loss[k].size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", k + 1, e + 1, report.stage_loss[k][e]);
            csv += buf;
        }
    write_text_atomic(path, csv);
}

int run_train(const Flags& f) {
    RunConfig cfg = load_run_config(f);
    const std::string out = f.out.empty() ? "model.tgre" : f.out;
    refuse_overwrite(out, f.force);
    std::cout << "variant: " << variant_name(cfg.model.variant) << "\n";
    std::cout << "parameters: " << count_model_parameters(cfg.model) << "\n";
    std::vector<Sample> data = train_split(cfg);
    std::cout << "training samples: " << data.size() << "\n";
    CascadeModel model = init_model(cfg.model, cfg.seed);
    TrainReport report = train_model(model, data, cfg.train, cfg.seed);
    for (size_t k = 0; k < report.stage_loss.size(); ++k) {
        const auto& curve = report.stage_loss[k];
        if (!curve.empty())
            std::cout << "stage " << (k + 1) << " loss: " << curve.front() << " -> " << curve.back() << "\n";
        const int bumps = monotone_violations(curve);
        if (bumps > 0)
            std::cerr << "note: stage " << (k + 1) << " loss rose noticeably in " << bumps << " epoch(s)\n";
    }
    save_model(model, out);
    write_loss_csv(out + ".loss.csv", report);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_eval(const Flags& f) {
    RunConfig cfg = load_run_config(f);
    std::vector<Sample> data = eval_split(cfg);
    std::vector<Shape> truths;
    for (const Sample& s : data) truths.push_back(s.shape);

    std::vector<Shape> preds;
    if (f.oracle) {
        preds = truths;
    } else {
        if (f.model_path.empty()) throw Error("eval needs --model (or --oracle)");
        CascadeModel model = load_model(f.model_path);
        const bool have_map = !f.map_path.empty();
        if (!have_map && model.cfg.landmarks != data[0].shape.points())
            throw Error("model predicts " + std::to_string(model.cfg.landmarks) + " landmarks but the dataset has " +
                        std::to_string(data[0].shape.points()) + "; fit and pass a --map");
        LandmarkMap map;
        if (have_map) map = load_landmark_map(f.map_path);
        EvalCounters::reset();
        for (const Sample& s : data) {
            Prediction p = cascade_predict(model, s.image, f.top1 ? InferMode::Top1 : InferMode::Full);
            preds.push_back(have_map ? map.apply(p.final_shape()) : p.final_shape());
        }
        const uint64_t evals = EvalCounters::weak_evals.load();
        std::cout << "weak evaluations: " << evals << " (" << (static_cast<double>(evals) / data.size() / model.cfg.stages)
                  << " per sample per stage)\n";
    }

    NmeResult r = evaluate_nme(preds, truths, make_normalizer(cfg));
    const std::string prefix = f.out.empty() ? "eval" : f.out;
    std::vector<std::string> ids;
    for (const Sample& s : data) ids.push_back(s.id);
    write_per_sample_csv(prefix + ".per_sample.csv", ids, r.per_sample);
    write_ced_csv(prefix + ".ced.csv", ced_curve(r.per_sample));
    std::printf("mean NME: %.6f\n", r.mean);
    std::cout << "wrote " << prefix << ".per_sample.csv and " << prefix << ".ced.csv\n";
    return 0;
}

int run_predict(const Flags& f) {
    if (f.model_path.empty()) throw Error("predict needs --model");
    if (f.image_path.empty()) throw Error("predict needs --image");
    CascadeModel model = load_model(f.model_path);
    Tensorf image = normalize_image(load_pgm(f.image_path));
    if (image.dim(0) != model.cfg.image_size || image.dim(1) != model.cfg.image_size)
        std::cerr << "note: image is " << image.dim(1) << "x" << image.dim(0) << ", model frame is "
                  << model.cfg.image_size << "x" << model.cfg.image_size << "\n";
    TrajectoryReport report = trajectory_report(model, image, f.top1 ? InferMode::Top1 : InferMode::Full);
    std::cout << format_trajectory(report);
    if (!f.out.empty()) {
        save_pts(f.out, report.shapes.back());
        std::cout << "wrote " << f.out << "\n";
    }
    return 0;
}

int run_ablate(const Flags& f) {
    RunConfig base = load_run_config(f);
    std::vector<std::string> names;
    {
        std::stringstream ss(f.variants_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) names.push_back(item);
    }
    if (names.empty()) throw Error("ablate needs a non-empty --variants list (e.g. sr,re,soft-gre,tree-gre)");
    std::vector<Variant> variants;
    for (const std::string& n : names) variants.push_back(parse_variant(n));

    std::vector<Sample> train_data = train_split(base);
    std::vector<Sample> eval_data = eval_split(base);
    std::vector<Shape> truths;
    for (const Sample& s : eval_data) truths.push_back(s.shape);
    const Normalizer norm = make_normalizer(base);

    // untrained mean-shape baseline
    std::vector<Shape> train_shapes;
    for (const Sample& s : train_data) train_shapes.push_back(s.shape);
    const Shape mean = compute_mean_shape(train_shapes);
    std::vector<Shape> mean_preds(truths.size(), mean);
    const double baseline = evaluate_nme(mean_preds, truths, norm).mean;

    std::string csv = "variant,split,mean_nme,parameters,train_seconds\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "baseline,eval,%.6f,0,0.000\n", baseline);
    csv += buf;
    std::cout << "baseline (mean shape): " << baseline << "\n";

    for (Variant v : variants) {
        RunConfig cfg = base;
        cfg.model.variant = v;
        cfg.validate();
        CascadeModel model = init_model(cfg.model, cfg.seed);
        const auto t0 = std::chrono::steady_clock::now();
        train_model(model, train_data, cfg.train, cfg.seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::vector<Shape> preds;
        for (const Sample& s : eval_data) preds.push_back(cascade_predict(model, s.image).final_shape());
        const double nme_v = evaluate_nme(preds, truths, norm).mean;
        std::snprintf(buf, sizeof buf, "%s,eval,%.6f,%lld,%.3f\n", variant_name(v), nme_v,
                      count_model_parameters(cfg.model), secs);
        csv += buf;
        std::cout << variant_name(v) << ": NME " << nme_v << ", " << count_model_parameters(cfg.model)
                  << " parameters, " << secs << "s\n";
    }
    const std::string out = f.out.empty() ? "ablation.csv" : f.out;
    write_text_atomic(out, csv);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_gate_stats(const Flags& f) {
    RunConfig cfg = load_run_config(f);
    if (f.model_path.empty()) throw Error("gate-stats needs --model");
    CascadeModel model = load_model(f.model_path);
    std::vector<Sample> data = eval_split(cfg);
    GateStats stats = gate_cumulative(model, data);
    const std::string out = f.out.empty() ? "gate_stats.csv" : f.out;
    write_gate_csv(out, stats);
    for (size_t k = 0; k < stats.cumprob.size(); ++k)
        std::cout << "stage " << (k + 1) << " top-1 mass: " << stats.cumprob[k][0] << "\n";
    std::cout << "wrote " << out << "\n";
    return 0;
}

std::vector<Shape> load_pts_dir(const std::string& dir, std::vector<std::string>* stems_out) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error(dir + " is not a directory");
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".pts") stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw Error("no .pts files in " + dir);
    std::vector<Shape> shapes;
    for (const std::string& stem : stems) shapes.push_back(load_pts((fs::path(dir) / (stem + ".pts")).string()));
    if (stems_out) *stems_out = std::move(stems);
    return shapes;
}

int run_fit_map(const Flags& f) {
    if (f.src_dir.empty() || f.dst_dir.empty()) throw Error("fit-map needs --src and --dst directories");
    if (f.out.empty()) throw Error("fit-map needs --out for the map file");
    std::vector<std::string> src_stems, dst_stems;
    std::vector<Shape> src = load_pts_dir(f.src_dir, &src_stems);
    std::vector<Shape> dst = load_pts_dir(f.dst_dir, &dst_stems);
    if (src_stems != dst_stems)
        throw Error("fit-map: " + f.src_dir + " and " + f.dst_dir + " must contain matching .pts stems");
    LandmarkMap map = fit_landmark_map(src, dst, f.ridge);
    const double res = map_residual(map, src, dst);
    save_landmark_map(map, f.out);
    std::cout << "fit " << src.size() << " pairs, residual " << res << "\n";
    std::cout << "wrote " << f.out << "\n";
    return 0;
}

int run_synth(const Flags& f) {
    RunConfig cfg = load_run_config(f);
    if (f.out.empty()) throw Error("synth needs --out directory");
    const int count = f.count > 0 ? f.count : cfg.train_count;
    std::filesystem::create_directories(f.out);
    SyntheticSpec spec = make_synth_spec(cfg);
    char name[64];
    for (int i = 0; i < count; ++i) {
        Sample s = generate_synthetic(spec, static_cast<uint64_t>(i));
        std::snprintf(name, sizeof name, "synth-%05d", i);
        const std::string base = (std::filesystem::path(f.out) / name).string();
        save_pgm(base + ".pgm", denormalize_image(s.image));
        save_pts(base + ".pts", s.shape);
    }
    std::cout << "wrote " << count << " samples to " << f.out << " (normalizer landmarks " << spec.norm_a << ","
              << spec.norm_b << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tree-gated deep regressor ensembles for cascaded face alignment"};
    app.require_subcommand(1);
    Flags f;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config_path, "config file (key = value lines, # comments)");
        sub->add_option("--seed", f.seed, "RNG seed (overrides config)")->each([&](const std::string&) { f.seed_set = true; });
        sub->add_option("--out", f.out, "output path");
        sub->add_option("--variant", f.variant, "sr | re | soft-gre | tree-gre (overrides config)");
    };

    CLI::App* train = app.add_subcommand("train", "train a cascade and write the model file");
    add_common(train);
    train->add_flag("--force", f.force, "overwrite an existing model file");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a model; writes NME and CED CSVs");
    add_common(eval);
    eval->add_option("--model", f.model_path, "model file");
    eval->add_flag("--top1", f.top1, "greedy inference: only the top-gated regressor runs");
    eval->add_option("--map", f.map_path, "landmark map applied to predictions before scoring");
    eval->add_flag("--oracle", f.oracle, "score the ground truth against itself (sanity baseline)");

    CLI::App* predict = app.add_subcommand("predict", "run the cascade on one image and print the trajectory");
    add_common(predict);
    predict->add_option("--model", f.model_path, "model file");
    predict->add_option("--image", f.image_path, "input PGM image");
    predict->add_flag("--top1", f.top1, "greedy inference");

    CLI::App* ablate = app.add_subcommand("ablate", "train several variants from one seed and tabulate NME");
    add_common(ablate);
    ablate->add_option("--variants", f.variants_csv, "comma-separated variant list");

    CLI::App* gate_stats = app.add_subcommand("gate-stats", "cumulative sorted gate mass per stage");
    add_common(gate_stats);
    gate_stats->add_option("--model", f.model_path, "model file");

    CLI::App* fit_map = app.add_subcommand("fit-map", "least-squares landmark map between two annotation sets");
    add_common(fit_map);
    fit_map->add_option("--src", f.src_dir, "directory of source .pts files");
    fit_map->add_option("--dst", f.dst_dir, "directory of target .pts files");
    fit_map->add_option("--ridge", f.ridge, "ridge regularization weight");

    CLI::App* synth = app.add_subcommand("synth", "emit a synthetic dataset as PGM/pts pairs");
    add_common(synth);
    synth->add_option("--count", f.count, "number of samples (default: train_count)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return run_train(f);
        if (eval->parsed()) return run_eval(f);
        if (predict->parsed()) return run_predict(f);
        if (ablate->parsed()) return run_ablate(f);
        if (gate_stats->parsed()) return run_gate_stats(f);
        if (fit_map->parsed()) return run_fit_map(f);
        if (synth->parsed()) return run_synth(f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
