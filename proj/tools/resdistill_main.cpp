#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "resdistill/data.hpp"
#include "resdistill/distill.hpp"
#include "resdistill/metrics.hpp"
#include "resdistill/model.hpp"
#include "resdistill/report.hpp"

namespace fs = std::filesystem;
using namespace resdistill;

namespace {

// Wires one subcommand's options to a JSON config file: explicit flags win,
// config values fill in the rest, built-in defaults cover everything else.
// Config keys mirror the long flag names without the leading dashes.
struct SubOptions {
    CLI::App* sub = nullptr;
    std::string config_path;
    std::vector<std::function<void(const nlohmann::json&)>> appliers;

    explicit SubOptions(CLI::App* s) : sub(s) {
        sub->add_option("--config", config_path,
                        "JSON file supplying defaults for any flag of this subcommand");
    }

    template <typename T>
    CLI::Option* opt(const std::string& name, T& target, const std::string& desc) {
        CLI::Option* o = sub->add_option(name, target, desc);
        const std::string key = name.substr(2);
        appliers.push_back([o, key, &target](const nlohmann::json& j) {
            if (o->count() == 0 && j.contains(key)) target = j.at(key).get<T>();
        });
        return o;
    }

    CLI::Option* flag(const std::string& name, bool& target, const std::string& desc) {
        CLI::Option* o = sub->add_flag(name, target, desc);
        const std::string key = name.substr(2);
        appliers.push_back([o, key, &target](const nlohmann::json& j) {
            if (o->count() == 0 && j.contains(key)) target = j.at(key).get<bool>();
        });
        return o;
    }

    void resolve() const {
        if (config_path.empty()) return;
        std::ifstream is(config_path);
        if (!is) throw std::runtime_error("cannot open config file " + config_path);
        nlohmann::json j;
        is >> j;
        if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
        for (const auto& apply : appliers) apply(j);
    }
};

struct ModelFlags {
    std::vector<int> widths = ModelConfig{}.stage_widths;
    int blocks = ModelConfig{}.blocks_per_stage;
    int groups = ModelConfig{}.num_groups;
    int classes = ModelConfig{}.num_classes;

    void attach(SubOptions& so) {
        so.opt("--widths", widths, "channel width per stage (comma separated)")->delimiter(',');
        so.opt("--blocks", blocks, "residual blocks per stage");
        so.opt("--groups", groups, "normalization groups per layer");
        so.opt("--classes", classes, "number of classes");
    }

    ModelConfig to_config() const {
        ModelConfig m;
        m.stage_widths = widths;
        m.blocks_per_stage = blocks;
        m.num_groups = groups;
        m.num_classes = classes;
        return m;
    }
};

struct TrainFlags {
    int epochs = 60;
    int accumulation = 8;
    double lr = AdamConfig{}.learning_rate;
    std::uint64_t seed = 0;
    bool no_augment = false;
    AugmentConfig aug;
    bool quiet = false;

    void attach(SubOptions& so, bool with_augment) {
        so.opt("--epochs", epochs, "training epochs");
        so.opt("--accumulation", accumulation, "records accumulated per optimizer step");
        so.opt("--lr", lr, "Adam learning rate");
        so.opt("--seed", seed, "seed for every derived random stream");
        so.flag("--quiet", quiet, "suppress per-epoch progress");
        if (with_augment) {
            so.flag("--no-augment", no_augment, "disable training-time augmentation");
            so.opt("--aug-brightness", aug.brightness, "brightness jitter half-range");
            so.opt("--aug-contrast", aug.contrast, "contrast jitter half-range");
            so.opt("--aug-saturation", aug.saturation, "saturation jitter half-range");
            so.opt("--aug-hue", aug.hue, "hue jitter as a fraction of a full rotation");
            so.opt("--aug-flip-prob", aug.flip_prob, "per-axis flip probability");
            so.opt("--aug-rotate", aug.rotate, "also rotate by a random quarter turn (0/1)");
        }
    }

    TrainSetup to_setup(const ModelConfig& model) const {
        TrainSetup s;
        s.model = model;
        s.adam.learning_rate = lr;
        s.augment = aug;
        s.augment_enabled = !no_augment;
        s.epochs = epochs;
        s.accumulation_size = accumulation;
        s.seed = seed;
        s.quiet = quiet;
        return s;
    }
};

const std::vector<std::string>& split_ids(const Dataset& ds, const std::string& name) {
    if (name == "train") return ds.splits.train;
    if (name == "validation") return ds.splits.validation;
    if (name == "test") return ds.splits.test;
    if (name == "aux_v1") return ds.splits.aux_v1;
    if (name == "aux_v2") return ds.splits.aux_v2;
    if (name == "development") return ds.splits.development;
    throw std::invalid_argument("unknown split '" + name + "'");
}

const std::vector<std::string>& nonempty_split(const Dataset& ds, const std::string& name) {
    const auto& ids = split_ids(ds, name);
    if (ids.empty())
        throw std::runtime_error("split '" + name + "' is empty in dataset " + ds.dir);
    return ids;
}

Dataset load_dataset_with_stats(const std::string& dir, StatsMap& stats) {
    Dataset ds = load_dataset(dir);
    stats = load_stats(ds.dir, nullptr);
    return ds;
}

template <typename F>
int with_precision(const std::string& precision, F&& body) {
    if (precision == "f32") return body(float{});
    if (precision == "f64") return body(double{});
    throw std::runtime_error("unknown precision '" + precision + "' (expected f32 or f64)");
}

int level_side(int base_size, double mag) {
    return int(std::max<long>(1, std::lround(base_size * mag)));
}

std::vector<ResizeMode> parse_modes(const std::vector<std::string>& names) {
    std::vector<ResizeMode> modes;
    for (const auto& n : names) modes.push_back(resize_mode_from_name(n));
    return modes;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"resolution-distillation toolkit: train a high-resolution teacher, distill it "
                 "into low-resolution students, and report the accuracy/compute tradeoff"};
    app.require_subcommand(1);
    std::deque<SubOptions> contexts;
    std::vector<std::pair<CLI::App*, std::function<int()>>> runners;

    auto make_sub = [&](const std::string& name, const std::string& desc) -> SubOptions& {
        contexts.emplace_back(app.add_subcommand(name, desc));
        return contexts.back();
    };

    // ----- gen-data ---------------------------------------------------------
    {
        auto& so = make_sub("gen-data", "render a synthetic multi-resolution dataset with splits");
        struct {
            std::string out;
            int patients = 60, classes = 3, base_size = 256;
            std::vector<double> levels{1.0, 0.5, 0.25, 0.125};
            double train_frac = 0.70, val_frac = 0.15, test_frac = 0.15;
            double aux1_frac = 0.0, aux2_frac = 0.0, dev_frac = 0.0;
            std::uint64_t seed = 0;
            bool quiet = false;
        } static o;
        so.opt("--output-dir", o.out, "dataset directory to create")->required();
        so.opt("--patients", o.patients, "number of labeled+auxiliary patients");
        so.opt("--classes", o.classes, "number of texture classes");
        so.opt("--base-size", o.base_size, "full-resolution image side length");
        so.opt("--levels", o.levels, "pyramid magnifications, descending from 1.0")->delimiter(',');
        so.opt("--train-frac", o.train_frac, "labeled-patient fraction for training");
        so.opt("--val-frac", o.val_frac, "labeled-patient fraction for validation");
        so.opt("--test-frac", o.test_frac, "labeled-patient fraction for testing");
        so.opt("--aux1-frac", o.aux1_frac, "fraction of all patients in the small auxiliary pool");
        so.opt("--aux2-frac", o.aux2_frac, "fraction of all patients in the large auxiliary pool");
        so.opt("--dev-frac", o.dev_frac, "fraction of all patients held out for development");
        so.opt("--seed", o.seed, "generation and split seed");
        so.flag("--quiet", o.quiet, "suppress the summary");
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            GenConfig g;
            g.num_patients = o.patients;
            g.classes = o.classes;
            g.base_size = o.base_size;
            g.levels = o.levels;
            g.seed = o.seed;
            SplitConfig s;
            s.train_fraction = o.train_frac;
            s.validation_fraction = o.val_frac;
            s.test_fraction = o.test_frac;
            s.aux_v1_fraction = o.aux1_frac;
            s.aux_v2_fraction = o.aux2_frac;
            s.dev_fraction = o.dev_frac;
            s.seed = o.seed;
            s.validate();

            auto records = gen_synthetic_dataset(g, o.out);
            SplitManifest splits = split_dataset(records, s);
            save_manifest(o.out, records, splits, g.levels);

            Dataset ds = load_dataset(o.out);
            StatsMap stats;
            for (double mag : ds.levels)
                stats[mag_tag(mag)] = compute_standardization(ds, splits.train, mag);
            save_stats(o.out, stats, train_fingerprint(splits.train));

            nlohmann::json cfg = {{"phase", "gen-data"},
                                  {"patients", o.patients},
                                  {"classes", o.classes},
                                  {"base-size", o.base_size},
                                  {"levels", o.levels},
                                  {"train-frac", o.train_frac},
                                  {"val-frac", o.val_frac},
                                  {"test-frac", o.test_frac},
                                  {"aux1-frac", o.aux1_frac},
                                  {"aux2-frac", o.aux2_frac},
                                  {"dev-frac", o.dev_frac},
                                  {"seed", o.seed}};
            std::ofstream(fs::path(o.out) / "run_config.json") << cfg.dump(2) << "\n";

            if (!o.quiet)
                std::cout << "dataset " << o.out << ": " << records.size() << " records | train "
                          << splits.train.size() << ", validation " << splits.validation.size()
                          << ", test " << splits.test.size() << ", aux_v1 " << splits.aux_v1.size()
                          << ", aux_v2 " << splits.aux_v2.size() << ", development "
                          << splits.development.size() << "\n";
            return 0;
        });
    }

    // ----- train-teacher ----------------------------------------------------
    {
        auto& so = make_sub("train-teacher",
                            "supervised training at one magnification (teacher or baseline)");
        struct {
            std::string data, out, train_split = "train", val_split = "validation";
            double mag = 1.0;
            std::string precision = "f32";
            ModelFlags model;
            TrainFlags train;
        } static o;
        so.opt("--data", o.data, "dataset directory")->required();
        so.opt("--output-dir", o.out, "run directory to create")->required();
        so.opt("--mag", o.mag, "input magnification");
        so.opt("--train-split", o.train_split, "split providing labeled training records");
        so.opt("--val-split", o.val_split, "split used for checkpoint selection");
        so.opt("--precision", o.precision, "f32 or f64");
        o.model.attach(so);
        o.train.attach(so, /*with_augment=*/true);
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            return with_precision(o.precision, [&](auto tag) {
                using T = decltype(tag);
                StatsMap stats;
                Dataset ds = load_dataset_with_stats(o.data, stats);
                PhaseResult r = train_teacher<T>(ds, stats, o.mag, nonempty_split(ds, o.train_split),
                                                 nonempty_split(ds, o.val_split),
                                                 o.train.to_setup(o.model.to_config()), o.out);
                if (!o.train.quiet)
                    std::cout << "best epoch " << r.best_epoch << ": " << r.best_metric
                              << "% validation accuracy | checkpoint " << r.checkpoint_path << "\n";
                return 0;
            });
        });
    }

    // ----- distill ----------------------------------------------------------
    {
        auto& so = make_sub("distill", "distill a frozen teacher into a low-resolution student");
        struct {
            std::string data, out, teacher;
            std::string distill_split = "aux_v1", dev_split = "development";
            double teacher_mag = 1.0, student_mag = 0.125, temperature = 4.0;
            double soft_weight = 1.0, pixel_weight = 1.0;
            std::string mode = "MP_AND_INT";
            bool warm_start = false;
            std::string precision = "f32";
            ModelFlags model;
            TrainFlags train;
        } static o;
        so.opt("--data", o.data, "dataset directory")->required();
        so.opt("--output-dir", o.out, "run directory to create")->required();
        so.opt("--teacher", o.teacher, "teacher checkpoint")->required();
        so.opt("--distill-split", o.distill_split, "split whose images drive distillation");
        so.opt("--dev-split", o.dev_split, "labeled split used for checkpoint selection");
        so.opt("--teacher-mag", o.teacher_mag, "teacher input magnification");
        so.opt("--student-mag", o.student_mag, "student input magnification");
        so.opt("--temperature", o.temperature, "softmax temperature");
        so.opt("--soft-weight", o.soft_weight, "weight of the distribution-matching term");
        so.opt("--pixel-weight", o.pixel_weight, "weight of the feature-map term");
        so.opt("--resize-mode", o.mode, "teacher-map resize: NONE, MP, INT, or MP_AND_INT");
        so.flag("--warm-start", o.warm_start, "initialize the student from the teacher weights");
        so.opt("--precision", o.precision, "f32 or f64");
        o.model.attach(so);
        o.train.attach(so, /*with_augment=*/true);
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            return with_precision(o.precision, [&](auto tag) {
                using T = decltype(tag);
                StatsMap stats;
                Dataset ds = load_dataset_with_stats(o.data, stats);
                DistillConfig d;
                d.temperature = o.temperature;
                d.resize_mode = resize_mode_from_name(o.mode);
                d.soft_weight = o.soft_weight;
                d.pixel_weight = o.pixel_weight;
                d.teacher_mag = o.teacher_mag;
                d.student_mag = o.student_mag;
                d.warm_start = o.warm_start;
                PhaseResult r = distill_student<T>(ds, stats, o.teacher,
                                                   nonempty_split(ds, o.distill_split),
                                                   nonempty_split(ds, o.dev_split), d,
                                                   o.train.to_setup(o.model.to_config()), o.out);
                if (!o.train.quiet)
                    std::cout << "best epoch " << r.best_epoch << ": " << r.best_metric
                              << "% dev accuracy | checkpoint " << r.checkpoint_path << "\n";
                return 0;
            });
        });
    }

    // ----- finetune ---------------------------------------------------------
    {
        auto& so = make_sub("finetune", "tune the classifier head of a distilled student");
        struct {
            std::string data, out, checkpoint;
            std::string train_split = "train", val_split = "validation", distill_split;
            double mag = 0.125;
            int patience = 10;
            std::string precision = "f32";
            ModelFlags model;
            TrainFlags train;
        } static o;
        so.opt("--data", o.data, "dataset directory")->required();
        so.opt("--output-dir", o.out, "run directory to create")->required();
        so.opt("--checkpoint", o.checkpoint, "student checkpoint to tune")->required();
        so.opt("--train-split", o.train_split, "labeled split for head updates");
        so.opt("--val-split", o.val_split, "split whose loss drives early stopping");
        so.opt("--distill-split", o.distill_split,
               "split the preceding distillation ran on; tuning is skipped when it was the "
               "labeled training set");
        so.opt("--mag", o.mag, "input magnification");
        so.opt("--patience", o.patience, "epochs without improvement before stopping");
        so.opt("--precision", o.precision, "f32 or f64");
        o.model.attach(so);
        o.train.attach(so, /*with_augment=*/false);
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            if (!o.distill_split.empty() && should_skip_finetune(o.distill_split)) {
                std::cout << "skipping head tuning: distillation already used the labeled "
                             "training set\n";
                return 0;
            }
            return with_precision(o.precision, [&](auto tag) {
                using T = decltype(tag);
                StatsMap stats;
                Dataset ds = load_dataset_with_stats(o.data, stats);
                TrainSetup setup = o.train.to_setup(o.model.to_config());
                setup.augment_enabled = false;
                PhaseResult r = fine_tune<T>(ds, stats, o.checkpoint,
                                             nonempty_split(ds, o.train_split),
                                             nonempty_split(ds, o.val_split), o.mag, setup,
                                             o.patience, o.out);
                if (!o.train.quiet)
                    std::cout << "best epoch " << r.best_epoch << ": validation loss "
                              << r.best_metric << " | checkpoint " << r.checkpoint_path << "\n";
                return 0;
            });
        });
    }

    // ----- eval -------------------------------------------------------------
    {
        auto& so = make_sub("eval", "score a checkpoint on a labeled split with bootstrap CIs");
        struct {
            std::string data, checkpoint, out, split = "test", tag = "model";
            double mag = 0.125, alpha = 0.05;
            int iterations = 10000, jobs = 1;
            std::uint64_t seed = 0;
            std::string precision = "f32";
            bool quiet = false;
        } static o;
        so.opt("--data", o.data, "dataset directory")->required();
        so.opt("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
        so.opt("--output-dir", o.out, "where eval.json goes (default: beside the checkpoint)");
        so.opt("--split", o.split, "labeled split to score");
        so.opt("--model-tag", o.tag, "model family name for the tradeoff table");
        so.opt("--mag", o.mag, "input magnification");
        so.opt("--iterations", o.iterations, "bootstrap resamples");
        so.opt("--alpha", o.alpha, "bootstrap significance level");
        so.opt("--jobs", o.jobs, "bootstrap worker threads");
        so.opt("--seed", o.seed, "bootstrap seed");
        so.opt("--precision", o.precision, "f32 or f64");
        so.flag("--quiet", o.quiet, "suppress the summary");
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            return with_precision(o.precision, [&](auto tag_) {
                using T = decltype(tag_);
                StatsMap stats;
                Dataset ds = load_dataset_with_stats(o.data, stats);
                const auto& ids = nonempty_split(ds, o.split);
                Model<T> model = load_checkpoint<T>(o.checkpoint);
                model.set_trainable(false);
                ImageCache images(ds);
                std::vector<int> preds, labels;
                accuracy_percent(model, images, ids, o.mag, stats, &preds, &labels);

                Image probe = images.get(ids.front(), o.mag);
                const double gflops = double(model.count_flops(probe.h, probe.w)) / 1e9;
                MetricsReport rep =
                    make_report(o.tag, mag_tag(o.mag), gflops, preds, labels,
                                model.config.num_classes, o.iterations, o.alpha, o.seed, o.jobs);

                const fs::path out_dir =
                    o.out.empty() ? fs::path(o.checkpoint).parent_path() : fs::path(o.out);
                fs::create_directories(out_dir);
                nlohmann::json j = {{"schema", "resdistill-eval-v1"},
                                    {"checkpoint", o.checkpoint},
                                    {"config",
                                     {{"data", o.data},
                                      {"split", o.split},
                                      {"model-tag", o.tag},
                                      {"mag", mag_tag(o.mag)},
                                      {"iterations", o.iterations},
                                      {"alpha", o.alpha},
                                      {"seed", o.seed},
                                      {"precision", o.precision}}},
                                    {"report", report_to_json(rep)}};
                std::ofstream(out_dir / "eval.json") << j.dump(2) << "\n";

                if (!o.quiet) {
                    char line[256];
                    std::snprintf(line, sizeof line,
                                  "%s @ %s: accuracy %.2f%% [%.2f, %.2f], macro F1 %.2f%% "
                                  "[%.2f, %.2f], %.4g GFLOPS (n=%d)\n",
                                  o.tag.c_str(), mag_tag(o.mag).c_str(), rep.metrics.accuracy,
                                  rep.accuracy_ci.lower, rep.accuracy_ci.upper,
                                  rep.metrics.macro_f1, rep.f1_ci.lower, rep.f1_ci.upper, gflops,
                                  rep.n_test);
                    std::cout << line;
                }
                return 0;
            });
        });
    }

    // ----- ablate -----------------------------------------------------------
    {
        auto& so = make_sub("ablate", "distill across resize modes x magnifications x seeds");
        struct {
            std::string data, out, teacher;
            std::string distill_split = "aux_v1", dev_split = "development";
            std::vector<double> mags{0.125, 0.25, 0.5};
            std::vector<std::string> modes{"NONE", "MP", "INT", "MP_AND_INT"};
            std::vector<std::uint64_t> seeds{0, 1, 2};
            double teacher_mag = 1.0, temperature = 4.0, soft_weight = 1.0, pixel_weight = 1.0;
            bool warm_start = false;
            int jobs = 1;
            std::string precision = "f32";
            ModelFlags model;
            TrainFlags train;
        } static o;
        so.opt("--data", o.data, "dataset directory")->required();
        so.opt("--output-dir", o.out, "grid directory to create")->required();
        so.opt("--teacher", o.teacher, "teacher checkpoint")->required();
        so.opt("--distill-split", o.distill_split, "split whose images drive distillation");
        so.opt("--dev-split", o.dev_split, "labeled split scored per cell");
        so.opt("--mags", o.mags, "student magnifications")->delimiter(',');
        so.opt("--modes", o.modes, "resize modes")->delimiter(',');
        so.opt("--seeds", o.seeds, "one distillation per seed and cell")->delimiter(',');
        so.opt("--teacher-mag", o.teacher_mag, "teacher input magnification");
        so.opt("--temperature", o.temperature, "softmax temperature");
        so.opt("--soft-weight", o.soft_weight, "weight of the distribution-matching term");
        so.opt("--pixel-weight", o.pixel_weight, "weight of the feature-map term");
        so.flag("--warm-start", o.warm_start, "initialize every student from the teacher weights");
        so.opt("--jobs", o.jobs, "cells trained in parallel");
        so.opt("--precision", o.precision, "f32 or f64");
        o.model.attach(so);
        o.train.attach(so, /*with_augment=*/true);
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            return with_precision(o.precision, [&](auto tag) {
                using T = decltype(tag);
                StatsMap stats;
                Dataset ds = load_dataset_with_stats(o.data, stats);
                DistillConfig base;
                base.temperature = o.temperature;
                base.soft_weight = o.soft_weight;
                base.pixel_weight = o.pixel_weight;
                base.teacher_mag = o.teacher_mag;
                base.warm_start = o.warm_start;

                nlohmann::json cfg = {{"phase", "ablate"},
                                      {"teacher", o.teacher},
                                      {"distill-split", o.distill_split},
                                      {"dev-split", o.dev_split},
                                      {"mags", o.mags},
                                      {"modes", o.modes},
                                      {"seeds", o.seeds},
                                      {"teacher-mag", o.teacher_mag},
                                      {"temperature", o.temperature},
                                      {"soft-weight", o.soft_weight},
                                      {"pixel-weight", o.pixel_weight},
                                      {"warm-start", o.warm_start},
                                      {"precision", o.precision}};
                fs::create_directories(o.out);
                std::ofstream(fs::path(o.out) / "run_config.json") << cfg.dump(2) << "\n";

                auto cells = run_ablation<T>(ds, stats, o.teacher, o.mags, parse_modes(o.modes),
                                             o.seeds, nonempty_split(ds, o.distill_split),
                                             nonempty_split(ds, o.dev_split), base,
                                             o.train.to_setup(o.model.to_config()), o.out, o.jobs);
                if (!o.train.quiet) {
                    for (const auto& c : cells)
                        std::cout << c.mode << " @ " << mag_tag(c.magnification) << " seed "
                                  << c.seed << ": " << c.dev_accuracy << "%\n";
                    std::cout << "grid written to " << o.out << "/ablation.csv\n";
                }
                return 0;
            });
        });
    }

    // ----- flops ------------------------------------------------------------
    {
        auto& so = make_sub("flops", "forward-pass cost at a magnification");
        struct {
            double mag = 0.125;
            int base_size = 256;
            ModelFlags model;
        } static o;
        so.opt("--mag", o.mag, "input magnification");
        so.opt("--base-size", o.base_size, "full-resolution image side length");
        o.model.attach(so);
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            validate_mag(o.mag);
            Model<float> model = build_model<float>(o.model.to_config(), 0);
            const int side = level_side(o.base_size, o.mag);
            const std::uint64_t at_mag = model.count_flops(side, side);
            const std::uint64_t at_full = model.count_flops(o.base_size, o.base_size);
            char line[256];
            std::snprintf(line, sizeof line,
                          "magnification %s (input %dx%d): %llu FLOPs (%.4f GFLOPS)\n",
                          mag_tag(o.mag).c_str(), side, side,
                          static_cast<unsigned long long>(at_mag), double(at_mag) / 1e9);
            std::cout << line;
            std::snprintf(line, sizeof line, "reduction vs magnification 1.0: %.2fx\n",
                          double(at_full) / double(at_mag));
            std::cout << line;
            return 0;
        });
    }

    // ----- report -----------------------------------------------------------
    {
        auto& so = make_sub("report", "bundle eval results into tables and the tradeoff chart");
        struct {
            std::string runs, out;
            bool quiet = false;
        } static o;
        so.opt("--runs", o.runs, "directory tree holding completed runs")->required();
        so.opt("--output-dir", o.out, "bundle directory to create")->required();
        so.flag("--quiet", o.quiet, "suppress the file list");
        runners.emplace_back(so.sub, [&so] {
            so.resolve();
            ReportBundle b = emit_report(o.runs, o.out);
            if (!o.quiet)
                std::cout << b.report_json << "\n"
                          << b.tradeoff_csv_path << "\n"
                          << b.tradeoff_svg_path << "\n"
                          << b.ablation_csv << "\n";
            return 0;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    try {
        for (const auto& [sub, run] : runners)
            if (sub->parsed()) return run();
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
