#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "resdistill/common.hpp"
#include "resdistill/data.hpp"
#include "resdistill/model.hpp"
#include "resdistill/ops.hpp"
#include "resdistill/optim.hpp"
#include "resdistill/resize.hpp"

namespace resdistill {

// ---------------------------------------------------------------------------
// Configuration

struct DistillConfig {
    double temperature = 4.0;
    ResizeMode resize_mode = ResizeMode::MP_AND_INT;
    double soft_weight = 1.0;
    double pixel_weight = 1.0;
    double teacher_mag = 1.0;
    double student_mag = 0.125;
    bool warm_start = false; // copy teacher weights into the student instead of a fresh init

    void validate() const {
        if (!(temperature > 0.0)) throw std::invalid_argument("DistillConfig: temperature must be > 0");
        if (soft_weight < 0.0 || pixel_weight < 0.0)
            throw std::invalid_argument("DistillConfig: loss weights must be >= 0");
        validate_mag(teacher_mag);
        validate_mag(student_mag);
        if (teacher_mag < student_mag)
            throw std::invalid_argument("DistillConfig: teacher magnification below the student's");
    }
};

// Scaffolding shared by every training phase.
struct TrainSetup {
    ModelConfig model;
    AdamConfig adam;
    AugmentConfig augment;
    bool augment_enabled = true;
    int epochs = 60;
    int accumulation_size = 8;
    std::uint64_t seed = 0;
    bool quiet = true;

    void validate() const {
        model.validate();
        adam.validate();
        augment.validate();
        if (epochs < 1) throw std::invalid_argument("TrainSetup: epochs must be >= 1");
        if (accumulation_size < 1)
            throw std::invalid_argument("TrainSetup: accumulation_size must be >= 1");
    }
};

struct TraceRow {
    int epoch = 0;
    double soft_loss = 0.0;
    double pixel_loss = 0.0;
    double total_loss = 0.0;
    double dev_accuracy = 0.0; // percent
};

struct PhaseResult {
    std::string run_dir;
    std::string checkpoint_path;
    std::vector<TraceRow> trace;
    int best_epoch = -1;
    double best_metric = 0.0; // selection metric at best_epoch (percent accuracy, or
                              // validation loss for the patience-stopped head tuning)
    double wall_seconds = 0.0;
    std::string config_fingerprint;
};

using StatsMap = std::map<std::string, ChannelStats>;

// ---------------------------------------------------------------------------
// Distillation loss

template <typename T>
struct DistillLossParts {
    TensorPtr<T> total, soft, pixel;
};

// total = soft_weight * T^2-scaled KL(teacher || student at temperature)
//       + pixel_weight * mean over active resize modes of MSE(resized teacher map, student map).
// Gradients reach the student only; teacher tensors enter as constants.
template <typename T>
DistillLossParts<T> distill_loss(const ModelOutput<T>& teacher, const ModelOutput<T>& student,
                                 const DistillConfig& cfg) {
    cfg.validate();
    DistillLossParts<T> parts;
    parts.soft = soft_loss(teacher.logits, student.logits, static_cast<T>(cfg.temperature));

    if (cfg.resize_mode == ResizeMode::NONE) {
        parts.pixel = scalar_tensor<T>(0);
    } else {
        const auto& ts = teacher.feature_map->shape;
        const auto& ss = student.feature_map->shape;
        if (ts.size() != 4 || ss.size() != 4)
            throw std::invalid_argument("distill_loss: feature maps must be [B,C,h,w]");
        if (ts[0] != ss[0]) throw std::invalid_argument("distill_loss: batch sizes disagree");
        const int b = ts[0], c = ts[1], ht = ts[2], wt = ts[3], hs = ss[2], ws = ss[3];

        // Resize each sample's teacher map once per active mode, gather the
        // resized maps into full-batch targets, then take one MSE per mode.
        std::vector<TensorPtr<T>> targets;
        const std::size_t plane = std::size_t(c) * hs * ws;
        for (int i = 0; i < b; ++i) {
            auto slice = make_tensor<T>({c, ht, wt});
            std::copy_n(teacher.feature_map->data.begin() + std::size_t(i) * c * ht * wt,
                        slice->data.size(), slice->data.begin());
            MapPair<T> pair = resize_teacher_maps(slice, {c, hs, ws}, cfg.resize_mode);
            if (targets.empty())
                for (std::size_t k = 0; k < pair.resized_teacher_maps.size(); ++k)
                    targets.push_back(make_tensor<T>({b, c, hs, ws}));
            for (std::size_t k = 0; k < pair.resized_teacher_maps.size(); ++k)
                std::copy_n(pair.resized_teacher_maps[k]->data.begin(), plane,
                            targets[k]->data.begin() + std::size_t(i) * plane);
        }
        parts.pixel = mse_loss(targets[0], student.feature_map);
        for (std::size_t k = 1; k < targets.size(); ++k)
            parts.pixel = add(parts.pixel, mse_loss(targets[k], student.feature_map));
        if (targets.size() > 1)
            parts.pixel = scale(parts.pixel, static_cast<T>(1.0 / double(targets.size())));
    }

    parts.total = add(scale(parts.soft, static_cast<T>(cfg.soft_weight)),
                      scale(parts.pixel, static_cast<T>(cfg.pixel_weight)));
    return parts;
}

// ---------------------------------------------------------------------------
// Image access: decoded pixels cached as the 8-bit values the PNGs store, so
// repeated epochs skip the decoder while reproducing read_png exactly.

class ImageCache {
public:
    explicit ImageCache(const Dataset& ds) : ds_(&ds) {}

    const Dataset& dataset() const { return *ds_; }

    Image get(const std::string& id, double mag) {
        auto key = std::make_pair(id, mag_tag(mag));
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            Image img = load_record_image(*ds_, id, mag);
            Entry e;
            e.c = img.channels;
            e.h = img.h;
            e.w = img.w;
            e.bytes.resize(img.px.size());
            for (std::size_t i = 0; i < img.px.size(); ++i)
                e.bytes[i] = std::uint8_t(std::lround(img.px[i] * 255.0f));
            it = cache_.emplace(std::move(key), std::move(e)).first;
        }
        const Entry& e = it->second;
        Image img = make_image(e.c, e.h, e.w);
        for (std::size_t i = 0; i < e.bytes.size(); ++i) img.px[i] = float(e.bytes[i]) / 255.0f;
        return img;
    }

private:
    struct Entry {
        std::vector<std::uint8_t> bytes;
        int c = 0, h = 0, w = 0;
    };
    const Dataset* ds_;
    std::map<std::pair<std::string, std::string>, Entry> cache_;
};

// One standardized [1,3,H,W] network input; `params` applies a shared
// augmentation draw (teacher and student views of a record must pass the
// same params so their contents stay aligned).
template <typename T>
TensorPtr<T> record_view(ImageCache& images, const std::string& id, double mag,
                         const ChannelStats& stats, const AugmentParams* params = nullptr) {
    Image img = images.get(id, mag);
    if (params) img = apply_augment(img, *params);
    standardize(img, stats);
    auto t = make_tensor<T>({1, img.channels, img.h, img.w});
    for (std::size_t i = 0; i < img.px.size(); ++i) t->data[i] = static_cast<T>(img.px[i]);
    return t;
}

namespace detail {

inline const ChannelStats& stats_for(const StatsMap& stats, double mag) {
    auto it = stats.find(mag_tag(mag));
    if (it == stats.end())
        throw std::invalid_argument("no standardization stats for magnification " + mag_tag(mag));
    return it->second;
}

inline int label_of(const Dataset& ds, const std::string& id) {
    const auto& rec = ds.record(id);
    if (!rec.class_label) throw std::invalid_argument("record " + id + " carries no label");
    return *rec.class_label;
}

template <typename T>
int argmax_row(const TensorPtr<T>& logits) {
    int best = 0;
    for (int k = 1; k < logits->shape.back(); ++k)
        if (logits->data[k] > logits->data[best]) best = k;
    return best;
}

} // namespace detail

// Accuracy (percent) of the model over labeled records, evaluated without
// augmentation. Optionally captures predictions and labels for reporting.
template <typename T>
double accuracy_percent(Model<T>& model, ImageCache& images, const std::vector<std::string>& ids,
                        double mag, const StatsMap& stats, std::vector<int>* predictions = nullptr,
                        std::vector<int>* labels = nullptr) {
    if (ids.empty()) throw std::invalid_argument("accuracy_percent: empty id list");
    const ChannelStats& st = detail::stats_for(stats, mag);
    int hits = 0;
    for (const auto& id : ids) {
        auto x = record_view<T>(images, id, mag, st);
        auto out = model.forward(x);
        int pred = detail::argmax_row(out.logits);
        int truth = detail::label_of(images.dataset(), id);
        hits += pred == truth;
        if (predictions) predictions->push_back(pred);
        if (labels) labels->push_back(truth);
    }
    return 100.0 * double(hits) / double(ids.size());
}

// ---------------------------------------------------------------------------
// Run artifacts

namespace detail {

inline std::string json_fingerprint(const nlohmann::json& j) {
    std::uint64_t h = hash_string(j.dump());
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string write_run_config(const std::string& run_dir, const nlohmann::json& j) {
    std::filesystem::create_directories(run_dir);
    std::ofstream os(std::filesystem::path(run_dir) / "run_config.json", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write run_config.json under " + run_dir);
    os << j.dump(2) << "\n";
    return json_fingerprint(j);
}

inline void write_trace_csv(const std::string& run_dir, const std::vector<TraceRow>& trace) {
    std::ofstream os(std::filesystem::path(run_dir) / "trace.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write trace.csv under " + run_dir);
    os << "epoch,soft_loss,pixel_loss,total_loss,dev_accuracy\n";
    char buf[160];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.soft_loss,
                      r.pixel_loss, r.total_loss, r.dev_accuracy);
        os << buf;
    }
}

inline nlohmann::json model_config_json(const ModelConfig& m) {
    return {{"stage_widths", m.stage_widths},
            {"blocks_per_stage", m.blocks_per_stage},
            {"input_channels", m.input_channels},
            {"groups", m.num_groups},
            {"num_classes", m.num_classes}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    m.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    m.input_channels = j.at("input_channels").get<int>();
    m.num_groups = j.at("groups").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    return m;
}

inline nlohmann::json adam_config_json(const AdamConfig& a) {
    return {{"learning_rate", a.learning_rate},
            {"beta1", a.beta1},
            {"beta2", a.beta2},
            {"epsilon", a.epsilon}};
}

inline AdamConfig adam_config_from_json(const nlohmann::json& j) {
    AdamConfig a;
    a.learning_rate = j.at("learning_rate").get<double>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.epsilon = j.at("epsilon").get<double>();
    return a;
}

inline nlohmann::json augment_config_json(const AugmentConfig& a, bool enabled) {
    return {{"brightness", a.brightness}, {"contrast", a.contrast}, {"saturation", a.saturation},
            {"hue", a.hue},               {"flip_prob", a.flip_prob}, {"rotate", a.rotate},
            {"enabled", enabled}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j, bool* enabled) {
    AugmentConfig a;
    a.brightness = j.at("brightness").get<double>();
    a.contrast = j.at("contrast").get<double>();
    a.saturation = j.at("saturation").get<double>();
    a.hue = j.at("hue").get<double>();
    a.flip_prob = j.at("flip_prob").get<double>();
    a.rotate = j.at("rotate").get<bool>();
    if (enabled) *enabled = j.at("enabled").get<bool>();
    return a;
}

inline nlohmann::json distill_config_json(const DistillConfig& d) {
    return {{"temperature", d.temperature},
            {"resize_mode", resize_mode_name(d.resize_mode)},
            {"soft_weight", d.soft_weight},
            {"pixel_weight", d.pixel_weight},
            {"teacher_mag", mag_tag(d.teacher_mag)},
            {"student_mag", mag_tag(d.student_mag)},
            {"warm_start", d.warm_start}};
}

inline DistillConfig distill_config_from_json(const nlohmann::json& j) {
    DistillConfig d;
    d.temperature = j.at("temperature").get<double>();
    d.resize_mode = resize_mode_from_name(j.at("resize_mode").get<std::string>());
    d.soft_weight = j.at("soft_weight").get<double>();
    d.pixel_weight = j.at("pixel_weight").get<double>();
    d.teacher_mag = parse_mag_tag(j.at("teacher_mag").get<std::string>());
    d.student_mag = parse_mag_tag(j.at("student_mag").get<std::string>());
    d.warm_start = j.at("warm_start").get<bool>();
    return d;
}

template <typename T>
constexpr const char* precision_name() {
    return sizeof(T) == 8 ? "f64" : "f32";
}

template <typename T>
nlohmann::json setup_json(const char* phase, const Dataset& ds, const TrainSetup& setup) {
    nlohmann::json j;
    j["phase"] = phase;
    j["precision"] = precision_name<T>();
    j["dataset_dir"] = ds.dir;
    j["model"] = model_config_json(setup.model);
    j["adam"] = adam_config_json(setup.adam);
    j["augment"] = augment_config_json(setup.augment, setup.augment_enabled);
    j["epochs"] = setup.epochs;
    j["accumulation_size"] = setup.accumulation_size;
    j["seed"] = setup.seed;
    return j;
}

inline TrainSetup setup_from_json(const nlohmann::json& j) {
    TrainSetup s;
    s.model = model_config_from_json(j.at("model"));
    s.adam = adam_config_from_json(j.at("adam"));
    s.augment = augment_config_from_json(j.at("augment"), &s.augment_enabled);
    s.epochs = j.at("epochs").get<int>();
    s.accumulation_size = j.at("accumulation_size").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

inline void log_epoch(bool quiet, const TraceRow& r) {
    if (quiet) return;
    std::fprintf(stderr, "  epoch %3d  loss %.4f  dev %.2f%%\n", r.epoch, r.total_loss,
                 r.dev_accuracy);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Phase I (and the low-resolution baseline): supervised cross-entropy training.

template <typename T>
PhaseResult train_teacher(const Dataset& ds, const StatsMap& stats, double mag,
                          const std::vector<std::string>& train_ids,
                          const std::vector<std::string>& val_ids, const TrainSetup& setup,
                          const std::string& run_dir) {
    setup.validate();
    validate_mag(mag);
    if (train_ids.empty()) throw std::invalid_argument("train_teacher: empty training set");
    if (val_ids.empty()) throw std::invalid_argument("train_teacher: empty validation set");
    const auto t0 = std::chrono::steady_clock::now();

    nlohmann::json cfg = detail::setup_json<T>("train-teacher", ds, setup);
    cfg["magnification"] = mag_tag(mag);
    cfg["train_ids"] = train_ids;
    cfg["val_ids"] = val_ids;

    PhaseResult result;
    result.run_dir = run_dir;
    result.config_fingerprint = detail::write_run_config(run_dir, cfg);
    result.checkpoint_path = (std::filesystem::path(run_dir) / "checkpoint.bin").string();

    ImageCache images(ds);
    const ChannelStats& st = detail::stats_for(stats, mag);
    Model<T> model = build_model<T>(setup.model, derive_seed(setup.seed, "init"));
    auto params = model.parameters();

    std::vector<int> labels;
    for (const auto& id : train_ids) labels.push_back(detail::label_of(ds, id));

    double best = -1.0;
    for (int epoch = 0; epoch < setup.epochs; ++epoch) {
        std::vector<std::size_t> order(train_ids.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(setup.seed, "order", std::uint64_t(epoch)));
        order_rng.shuffle(order.begin(), order.end());

        double epoch_loss = 0.0;
        for (std::size_t chunk = 0; chunk < order.size(); chunk += setup.accumulation_size) {
            const std::size_t chunk_end = std::min(order.size(), chunk + setup.accumulation_size);
            const T inv = static_cast<T>(1.0 / double(chunk_end - chunk));
            for (std::size_t i = chunk; i < chunk_end; ++i) {
                const std::string& id = train_ids[order[i]];
                AugmentParams ap;
                if (setup.augment_enabled) {
                    Rng arng(derive_seed(setup.seed, "augment",
                                         hash_combine(std::uint64_t(epoch), hash_string(id))));
                    ap = sample_augment(setup.augment, arng);
                }
                auto x = record_view<T>(images, id, mag, st, setup.augment_enabled ? &ap : nullptr);
                auto out = model.forward(x);
                auto loss = cross_entropy_loss(out.logits, {labels[order[i]]});
                backward(loss, inv);
                epoch_loss += double(loss->data[0]);
            }
            adam_step(params, setup.adam);
        }

        TraceRow row;
        row.epoch = epoch;
        row.total_loss = epoch_loss / double(train_ids.size());
        row.dev_accuracy = accuracy_percent(model, images, val_ids, mag, stats);
        result.trace.push_back(row);
        detail::log_epoch(setup.quiet, row);
        if (row.dev_accuracy > best) {
            best = row.dev_accuracy;
            result.best_epoch = epoch;
            result.best_metric = best;
            save_checkpoint(model, result.checkpoint_path);
        }
    }

    detail::write_trace_csv(run_dir, result.trace);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Phase II: the teacher's soft targets and feature maps supervise a fresh
// student over an unlabeled id list. Labels of `distill_ids` are never read;
// `dev_ids` is the labeled proxy set used only to pick the best checkpoint.

// Teacher outputs keyed by record id, reusable across runs when augmentation
// is off (the teacher view is then epoch-invariant).
template <typename T>
using TeacherCache = std::map<std::string, ModelOutput<T>>;

template <typename T>
TeacherCache<T> build_teacher_cache(Model<T>& teacher, ImageCache& images,
                                    const std::vector<std::string>& ids, double teacher_mag,
                                    const StatsMap& stats) {
    const ChannelStats& st = detail::stats_for(stats, teacher_mag);
    TeacherCache<T> cache;
    for (const auto& id : ids) {
        auto x = record_view<T>(images, id, teacher_mag, st);
        cache.emplace(id, teacher.forward(x));
    }
    return cache;
}

template <typename T>
PhaseResult distill_student(const Dataset& ds, const StatsMap& stats,
                            const std::string& teacher_checkpoint,
                            const std::vector<std::string>& distill_ids,
                            const std::vector<std::string>& dev_ids, const DistillConfig& dcfg,
                            const TrainSetup& setup, const std::string& run_dir,
                            const TeacherCache<T>* shared_teacher_outputs = nullptr) {
    setup.validate();
    dcfg.validate();
    if (distill_ids.empty()) throw std::invalid_argument("distill_student: empty distillation set");
    if (dev_ids.empty()) throw std::invalid_argument("distill_student: empty dev set");
    const auto t0 = std::chrono::steady_clock::now();

    nlohmann::json cfg = detail::setup_json<T>("distill", ds, setup);
    cfg["distill"] = detail::distill_config_json(dcfg);
    cfg["teacher_checkpoint"] = teacher_checkpoint;
    cfg["distill_ids"] = distill_ids;
    cfg["dev_ids"] = dev_ids;

    PhaseResult result;
    result.run_dir = run_dir;
    result.config_fingerprint = detail::write_run_config(run_dir, cfg);
    result.checkpoint_path = (std::filesystem::path(run_dir) / "checkpoint.bin").string();

    Model<T> teacher = load_checkpoint<T>(teacher_checkpoint);
    teacher.set_trainable(false); // frozen: forwards build no graph, optimizer never sees it
    if (!(teacher.config == setup.model))
        throw std::invalid_argument("distill_student: teacher and student architectures differ");

    Model<T> student = build_model<T>(setup.model, derive_seed(setup.seed, "student-init"));
    if (dcfg.warm_start) {
        auto src = teacher.parameters();
        auto dst = student.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value->data = src[i]->value->data;
    }
    auto params = student.parameters();

    ImageCache images(ds);
    const ChannelStats& teacher_st = detail::stats_for(stats, dcfg.teacher_mag);
    const bool cacheable = !setup.augment_enabled;
    TeacherCache<T> local_cache;

    double best = -1.0;
    for (int epoch = 0; epoch < setup.epochs; ++epoch) {
        std::vector<std::size_t> order(distill_ids.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(setup.seed, "order", std::uint64_t(epoch)));
        order_rng.shuffle(order.begin(), order.end());

        double soft_sum = 0.0, pixel_sum = 0.0, total_sum = 0.0;
        for (std::size_t chunk = 0; chunk < order.size(); chunk += setup.accumulation_size) {
            const std::size_t chunk_end = std::min(order.size(), chunk + setup.accumulation_size);
            const T inv = static_cast<T>(1.0 / double(chunk_end - chunk));
            for (std::size_t i = chunk; i < chunk_end; ++i) {
                const std::string& id = distill_ids[order[i]];
                AugmentParams ap;
                if (setup.augment_enabled) {
                    Rng arng(derive_seed(setup.seed, "augment",
                                         hash_combine(std::uint64_t(epoch), hash_string(id))));
                    ap = sample_augment(setup.augment, arng);
                }

                const ModelOutput<T>* t_out = nullptr;
                ModelOutput<T> t_fresh;
                if (cacheable && shared_teacher_outputs) {
                    auto it = shared_teacher_outputs->find(id);
                    if (it == shared_teacher_outputs->end())
                        throw std::invalid_argument("distill_student: shared teacher outputs miss " + id);
                    t_out = &it->second;
                } else if (cacheable) {
                    auto it = local_cache.find(id);
                    if (it == local_cache.end()) {
                        auto x = record_view<T>(images, id, dcfg.teacher_mag, teacher_st);
                        it = local_cache.emplace(id, teacher.forward(x)).first;
                    }
                    t_out = &it->second;
                } else {
                    auto x = record_view<T>(images, id, dcfg.teacher_mag, teacher_st, &ap);
                    t_fresh = teacher.forward(x);
                    t_out = &t_fresh;
                }

                auto sx = record_view<T>(images, id, dcfg.student_mag,
                                         detail::stats_for(stats, dcfg.student_mag),
                                         setup.augment_enabled ? &ap : nullptr);
                auto s_out = student.forward(sx);
                auto parts = distill_loss(*t_out, s_out, dcfg);
                backward(parts.total, inv);
                soft_sum += double(parts.soft->data[0]);
                pixel_sum += double(parts.pixel->data[0]);
                total_sum += double(parts.total->data[0]);
            }
            adam_step(params, setup.adam);
        }

        TraceRow row;
        row.epoch = epoch;
        row.soft_loss = soft_sum / double(distill_ids.size());
        row.pixel_loss = pixel_sum / double(distill_ids.size());
        row.total_loss = total_sum / double(distill_ids.size());
        row.dev_accuracy = accuracy_percent(student, images, dev_ids, dcfg.student_mag, stats);
        result.trace.push_back(row);
        detail::log_epoch(setup.quiet, row);
        if (row.dev_accuracy > best) {
            best = row.dev_accuracy;
            result.best_epoch = epoch;
            result.best_metric = best;
            save_checkpoint(student, result.checkpoint_path);
        }
    }

    detail::write_trace_csv(run_dir, result.trace);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Phase III: head-only tuning with patience-based early stop on validation
// loss. Skipped by pipelines whose Phase II already consumed the labeled
// training set (the flag below), since nothing new would be learned.

inline bool should_skip_finetune(const std::string& distill_split_name) {
    return distill_split_name == "train";
}

template <typename T>
PhaseResult fine_tune(const Dataset& ds, const StatsMap& stats, const std::string& student_checkpoint,
                      const std::vector<std::string>& train_ids,
                      const std::vector<std::string>& val_ids, double mag, const TrainSetup& setup,
                      int patience, const std::string& run_dir) {
    setup.validate();
    validate_mag(mag);
    if (train_ids.empty()) throw std::invalid_argument("fine_tune: empty training set");
    if (val_ids.empty()) throw std::invalid_argument("fine_tune: empty validation set");
    if (patience < 1) throw std::invalid_argument("fine_tune: patience must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();

    nlohmann::json cfg = detail::setup_json<T>("finetune", ds, setup);
    cfg["magnification"] = mag_tag(mag);
    cfg["checkpoint"] = student_checkpoint;
    cfg["patience"] = patience;
    cfg["train_ids"] = train_ids;
    cfg["val_ids"] = val_ids;

    PhaseResult result;
    result.run_dir = run_dir;
    result.config_fingerprint = detail::write_run_config(run_dir, cfg);
    result.checkpoint_path = (std::filesystem::path(run_dir) / "checkpoint.bin").string();

    Model<T> model = load_checkpoint<T>(student_checkpoint);
    model.freeze_except_fc();
    auto params = model.parameters();

    ImageCache images(ds);
    const ChannelStats& st = detail::stats_for(stats, mag);
    std::vector<int> labels;
    for (const auto& id : train_ids) labels.push_back(detail::label_of(ds, id));
    std::vector<int> val_labels;
    for (const auto& id : val_ids) val_labels.push_back(detail::label_of(ds, id));

    auto validation_loss = [&]() {
        double sum = 0.0;
        for (std::size_t i = 0; i < val_ids.size(); ++i) {
            auto x = record_view<T>(images, val_ids[i], mag, st);
            auto out = model.forward(x);
            auto loss = cross_entropy_loss(out.logits, {val_labels[i]});
            sum += double(loss->data[0]);
        }
        return sum / double(val_ids.size());
    };

    double best_loss = std::numeric_limits<double>::infinity();
    int wait = 0;
    for (int epoch = 0; epoch < setup.epochs; ++epoch) {
        std::vector<std::size_t> order(train_ids.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(setup.seed, "order", std::uint64_t(epoch)));
        order_rng.shuffle(order.begin(), order.end());

        double epoch_loss = 0.0;
        for (std::size_t chunk = 0; chunk < order.size(); chunk += setup.accumulation_size) {
            const std::size_t chunk_end = std::min(order.size(), chunk + setup.accumulation_size);
            const T inv = static_cast<T>(1.0 / double(chunk_end - chunk));
            for (std::size_t i = chunk; i < chunk_end; ++i) {
                const std::string& id = train_ids[order[i]];
                AugmentParams ap;
                if (setup.augment_enabled) {
                    Rng arng(derive_seed(setup.seed, "augment",
                                         hash_combine(std::uint64_t(epoch), hash_string(id))));
                    ap = sample_augment(setup.augment, arng);
                }
                auto x = record_view<T>(images, id, mag, st, setup.augment_enabled ? &ap : nullptr);
                auto out = model.forward(x);
                auto loss = cross_entropy_loss(out.logits, {labels[order[i]]});
                backward(loss, inv);
                epoch_loss += double(loss->data[0]);
            }
            adam_step(params, setup.adam);
        }

        const double vloss = validation_loss();
        TraceRow row;
        row.epoch = epoch;
        row.total_loss = epoch_loss / double(train_ids.size());
        row.dev_accuracy = accuracy_percent(model, images, val_ids, mag, stats);
        result.trace.push_back(row);
        detail::log_epoch(setup.quiet, row);

        if (vloss < best_loss - 1e-9) {
            best_loss = vloss;
            result.best_epoch = epoch;
            result.best_metric = vloss;
            save_checkpoint(model, result.checkpoint_path);
            wait = 0;
        } else if (++wait >= patience) {
            break;
        }
    }
    if (result.best_epoch < 0) { // patience consumed without any improvement
        result.best_epoch = 0;
        result.best_metric = best_loss;
        save_checkpoint(model, result.checkpoint_path);
    }

    detail::write_trace_csv(run_dir, result.trace);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Ablation driver: one distillation per (mode, magnification, seed) cell.

struct AblationCell {
    std::string mode;
    double magnification = 0.0;
    std::uint64_t seed = 0;
    double dev_accuracy = 0.0; // percent, best epoch
    std::string fingerprint;
    std::string run_dir;
};

template <typename T>
std::vector<AblationCell> run_ablation(const Dataset& ds, const StatsMap& stats,
                                       const std::string& teacher_checkpoint,
                                       const std::vector<double>& magnifications,
                                       const std::vector<ResizeMode>& modes,
                                       const std::vector<std::uint64_t>& seeds,
                                       const std::vector<std::string>& distill_ids,
                                       const std::vector<std::string>& dev_ids,
                                       const DistillConfig& base_dcfg, const TrainSetup& base_setup,
                                       const std::string& out_root, int jobs = 1) {
    if (magnifications.empty() || modes.empty() || seeds.empty())
        throw std::invalid_argument("run_ablation: empty axis");
    if (jobs < 1) throw std::invalid_argument("run_ablation: jobs must be >= 1");

    // When the cells train without augmentation every one of them sees the
    // same teacher view, so its outputs are computed once here and shared
    // read-only. Augmented cells recompute teacher views per epoch instead.
    const bool share_teacher = !base_setup.augment_enabled;
    TeacherCache<T> teacher_outputs;
    if (share_teacher) {
        Model<T> teacher = load_checkpoint<T>(teacher_checkpoint);
        teacher.set_trainable(false);
        ImageCache images(ds);
        teacher_outputs =
            build_teacher_cache(teacher, images, distill_ids, base_dcfg.teacher_mag, stats);
    }

    struct Job {
        ResizeMode mode;
        double mag;
        std::uint64_t seed;
    };
    std::vector<Job> grid;
    for (ResizeMode mode : modes)
        for (double mag : magnifications)
            for (std::uint64_t seed : seeds) grid.push_back({mode, mag, seed});

    std::vector<AblationCell> cells(grid.size());
    auto run_cell = [&](std::size_t i) {
        const Job& job = grid[i];
        DistillConfig dcfg = base_dcfg;
        dcfg.resize_mode = job.mode;
        dcfg.student_mag = job.mag;
        TrainSetup setup = base_setup;
        setup.seed = job.seed;
        std::string run_dir = (std::filesystem::path(out_root) /
                               ("cell_" + std::string(resize_mode_name(job.mode)) + "_" +
                                mag_tag(job.mag) + "_s" + std::to_string(job.seed)))
                                  .string();
        PhaseResult r = distill_student<T>(ds, stats, teacher_checkpoint, distill_ids, dev_ids, dcfg,
                                           setup, run_dir, share_teacher ? &teacher_outputs : nullptr);
        cells[i] = {resize_mode_name(job.mode), job.mag, job.seed, r.best_metric,
                    r.config_fingerprint,      r.run_dir};
    };

    if (jobs == 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) run_cell(i);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = std::size_t(t); i < grid.size(); i += std::size_t(jobs))
                    run_cell(i);
            });
        for (auto& th : pool) th.join();
    }

    std::filesystem::create_directories(out_root);
    std::ofstream os(std::filesystem::path(out_root) / "ablation.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write ablation.csv under " + out_root);
    os << "mode,magnification,seed,dev_accuracy,fingerprint\n";
    char buf[200];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.10g,%s\n", c.mode.c_str(),
                      mag_tag(c.magnification).c_str(), static_cast<unsigned long long>(c.seed),
                      c.dev_accuracy, c.fingerprint.c_str());
        os << buf;
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Replay: rebuild any phase from its persisted run_config.json.

namespace detail {

template <typename T>
PhaseResult replay_typed(const nlohmann::json& j, const Dataset& ds, const StatsMap& stats,
                         const std::string& out_dir) {
    const std::string phase = j.at("phase").get<std::string>();
    TrainSetup setup = setup_from_json(j);
    if (phase == "train-teacher") {
        return train_teacher<T>(ds, stats, parse_mag_tag(j.at("magnification").get<std::string>()),
                                j.at("train_ids").get<std::vector<std::string>>(),
                                j.at("val_ids").get<std::vector<std::string>>(), setup, out_dir);
    }
    if (phase == "distill") {
        return distill_student<T>(ds, stats, j.at("teacher_checkpoint").get<std::string>(),
                                  j.at("distill_ids").get<std::vector<std::string>>(),
                                  j.at("dev_ids").get<std::vector<std::string>>(),
                                  distill_config_from_json(j.at("distill")), setup, out_dir);
    }
    if (phase == "finetune") {
        return fine_tune<T>(ds, stats, j.at("checkpoint").get<std::string>(),
                            j.at("train_ids").get<std::vector<std::string>>(),
                            j.at("val_ids").get<std::vector<std::string>>(),
                            parse_mag_tag(j.at("magnification").get<std::string>()), setup,
                            j.at("patience").get<int>(), out_dir);
    }
    throw std::invalid_argument("replay: unknown phase '" + phase + "'");
}

} // namespace detail

// Re-runs the persisted configuration into `out_dir`; with the same dataset
// on disk the produced checkpoint and trace bytes match the original run.
inline PhaseResult replay_run(const std::string& run_config_path, const std::string& out_dir) {
    std::ifstream is(run_config_path);
    if (!is) throw std::runtime_error("replay: cannot open " + run_config_path);
    nlohmann::json j;
    is >> j;

    Dataset ds = load_dataset(j.at("dataset_dir").get<std::string>());
    StatsMap stats = load_stats(ds.dir, nullptr);
    const std::string precision = j.at("precision").get<std::string>();
    if (precision == "f64") return detail::replay_typed<double>(j, ds, stats, out_dir);
    if (precision == "f32") return detail::replay_typed<float>(j, ds, stats, out_dir);
    throw std::invalid_argument("replay: unknown precision '" + precision + "'");
}

} // namespace resdistill
