#include "resdistill/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "resdistill/resize.hpp"

namespace fs = std::filesystem;

namespace resdistill {

// ------------------------------------------------------------------ mag tags

void validate_mag(double value) {
    if (!(value > 0.0) || value > 1.0)
        throw std::invalid_argument("magnification must be in (0,1], got " + std::to_string(value));
}

std::string mag_tag(double value) {
    validate_mag(value);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    std::string s(buf);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (s.back() == '.') s.push_back('0'); // "1." -> "1.0"
    return s;
}

double parse_mag_tag(const std::string& tag) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(tag, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad magnification tag: " + tag);
    }
    if (pos != tag.size()) throw std::invalid_argument("bad magnification tag: " + tag);
    validate_mag(v);
    return v;
}

// ------------------------------------------------------------------- pyramid

std::vector<std::pair<double, Image>> build_pyramid(const Image& base,
                                                    const std::vector<double>& levels) {
    std::vector<std::pair<double, Image>> out;
    for (double level : levels) {
        validate_mag(level);
        if (level == 1.0) {
            out.emplace_back(level, base);
            continue;
        }
        int oh = std::max(1, int(std::lround(base.h * level)));
        int ow = std::max(1, int(std::lround(base.w * level)));
        Image img = make_image(base.channels, oh, ow);
        auto resized = lanczos_resize(base.px, base.channels, base.h, base.w, oh, ow, 0.0f, 1.0f);
        img.px = std::move(resized);
        out.emplace_back(level, std::move(img));
    }
    return out;
}

// ----------------------------------------------------------------- generator

namespace {

void add_gaussian_blob(Image& img, double cx, double cy, double sigma, double amp,
                       const double gain[3]) {
    const int x0 = std::max(0, int(cx - 3 * sigma)), x1 = std::min(img.w - 1, int(cx + 3 * sigma));
    const int y0 = std::max(0, int(cy - 3 * sigma)), y1 = std::min(img.h - 1, int(cy + 3 * sigma));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const std::size_t plane = img.plane();
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            double g = std::exp(-d2 * inv) * amp;
            for (int c = 0; c < 3; ++c)
                img.px[c * plane + std::size_t(y) * img.w + x] += float(g * gain[c]);
        }
}

// Stripe patches: a Gaussian envelope multiplying a non-negative fine carrier
// 0.5 + 0.5*sin(2*pi*u/3 + phase). The carrier has a 3 px period, so it
// aliases away under anti-aliased downsampling at 1/8 scale, while the
// envelope term (amp/2 on average) survives as a dim smooth bump.
void add_stripe_patch(Image& img, double cx, double cy, double sigma, double amp, double theta,
                      double phase, const double gain[3]) {
    const int x0 = std::max(0, int(cx - 3 * sigma)), x1 = std::min(img.w - 1, int(cx + 3 * sigma));
    const int y0 = std::max(0, int(cy - 3 * sigma)), y1 = std::min(img.h - 1, int(cy + 3 * sigma));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const double ux = std::cos(theta), uy = std::sin(theta);
    const double two_pi_over_3 = 2.0 * 3.14159265358979323846 / 3.0;
    const std::size_t plane = img.plane();
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            double env = std::exp(-d2 * inv);
            double u = x * ux + y * uy;
            double carrier = 0.5 + 0.5 * std::sin(two_pi_over_3 * u + phase);
            double v = env * amp * carrier;
            for (int c = 0; c < 3; ++c)
                img.px[c * plane + std::size_t(y) * img.w + x] += float(v * gain[c]);
        }
}

Image render_record(int class_label, int base_size, Rng& rng) {
    Image img = make_image(3, base_size, base_size);
    const double scale = base_size / 256.0;
    const std::size_t plane = img.plane();

    // Slightly tinted flat background.
    for (int c = 0; c < 3; ++c) {
        float bg = float(0.5 + rng.normal(0.0, 0.02));
        std::fill(img.px.begin() + c * plane, img.px.begin() + (c + 1) * plane, bg);
    }

    const bool has_blobs = class_label == 0 || class_label == 1;
    const bool has_stripes = class_label == 1 || class_label == 2;

    if (has_blobs) {
        int n = 8 + int(rng.uniform_index(7)); // 8..14
        for (int i = 0; i < n; ++i) {
            double cx = rng.uniform(0, base_size), cy = rng.uniform(0, base_size);
            double sigma = rng.uniform(10, 16) * scale;
            double amp = std::clamp(rng.normal(0.20, 0.04), 0.08, 0.32);
            double gain[3] = {rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)};
            add_gaussian_blob(img, cx, cy, sigma, amp, gain);
        }
    }
    if (has_stripes) {
        // The whole image shares one orientation and one random phase.
        double theta = rng.uniform(0.0, 3.14159265358979323846);
        double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        int n = 3 + int(rng.uniform_index(4)); // 3..6
        for (int i = 0; i < n; ++i) {
            double cx = rng.uniform(0, base_size), cy = rng.uniform(0, base_size);
            double sigma = rng.uniform(14, 22) * scale;
            double amp = std::clamp(rng.normal(0.30, 0.03), 0.20, 0.40);
            double gain[3] = {rng.uniform(0.95, 1.05), rng.uniform(0.95, 1.05),
                              rng.uniform(0.95, 1.05)};
            add_stripe_patch(img, cx, cy, sigma, amp, theta, phase, gain);
        }
    }

    for (auto& v : img.px) v = std::clamp(float(v + rng.normal(0.0, 0.05)), 0.0f, 1.0f);
    return img;
}

} // namespace

std::vector<ImageRecord> gen_synthetic_dataset(const GenConfig& cfg, const std::string& out_dir) {
    if (cfg.classes < 2) throw std::invalid_argument("gen_synthetic_dataset: need at least 2 classes");
    if (cfg.classes > 3)
        throw std::invalid_argument("gen_synthetic_dataset: the texture family defines 3 classes");
    if (cfg.num_patients < cfg.classes)
        throw std::invalid_argument("gen_synthetic_dataset: need at least one patient per class");
    if (cfg.base_size < 64) throw std::invalid_argument("gen_synthetic_dataset: base_size too small");
    if (cfg.levels.empty() || cfg.levels.front() != 1.0)
        throw std::invalid_argument("gen_synthetic_dataset: levels must start with the base 1.0");
    for (double lv : cfg.levels) validate_mag(lv);

    fs::create_directories(fs::path(out_dir) / "images");

    std::vector<ImageRecord> records;
    for (int p = 0; p < cfg.num_patients; ++p) {
        const int class_label = p % cfg.classes; // round-robin keeps classes balanced +-1
        char pid[16];
        std::snprintf(pid, sizeof pid, "p%04d", p);

        // Image count varies per patient, drawn from the patient's stream.
        Rng patient_rng(derive_seed(cfg.seed, "patient", std::uint64_t(p)));
        int n_images = 1 + int(patient_rng.uniform_index(3));

        for (int i = 0; i < n_images; ++i) {
            ImageRecord rec;
            rec.patient_id = pid;
            rec.id = std::string(pid) + "_i" + std::to_string(i);
            rec.class_label = class_label;

            Rng rng(derive_seed(cfg.seed, "record", hash_string(rec.id)));
            Image base = quantize_image(render_record(class_label, cfg.base_size, rng));
            // The pyramid is built from the quantized base, i.e. exactly what
            // the stored base PNG decodes to, so every stored level can be
            // re-derived bit-exactly from the stored base.
            auto pyramid = build_pyramid(base, cfg.levels);
            for (auto& [level, img] : pyramid) {
                std::string rel = "images/" + rec.id + "_" + mag_tag(level) + ".png";
                write_png((fs::path(out_dir) / rel).string(), quantize_image(img));
                rec.pyramid[mag_tag(level)] = rel;
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

// -------------------------------------------------------------- augmentation

void AugmentConfig::validate() const {
    if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0)
        throw std::invalid_argument("AugmentConfig: jitter half-ranges must be >= 0");
    if (flip_prob < 0 || flip_prob > 1)
        throw std::invalid_argument("AugmentConfig: flip_prob must be in [0,1]");
}

AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    AugmentParams p;
    p.brightness = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness);
    p.contrast = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast);
    p.saturation = 1.0 + rng.uniform(-cfg.saturation, cfg.saturation);
    p.hue_angle = rng.uniform(-cfg.hue, cfg.hue) * 2.0 * 3.14159265358979323846;
    p.hflip = rng.uniform() < cfg.flip_prob;
    p.vflip = rng.uniform() < cfg.flip_prob;
    p.quarter_turns = cfg.rotate ? int(rng.uniform_index(4)) : 0;
    return p;
}

namespace {

Image rotate_quarter(const Image& img, int turns) {
    turns = ((turns % 4) + 4) % 4;
    if (turns == 0) return img;
    const std::size_t plane = img.plane();
    int oh = (turns % 2 == 0) ? img.h : img.w;
    int ow = (turns % 2 == 0) ? img.w : img.h;
    Image out = make_image(img.channels, oh, ow);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                int oy = 0, ox = 0;
                switch (turns) { // counter-clockwise
                    case 1: oy = img.w - 1 - x; ox = y; break;
                    case 2: oy = img.h - 1 - y; ox = img.w - 1 - x; break;
                    case 3: oy = x; ox = img.h - 1 - y; break;
                }
                out.px[c * out.plane() + std::size_t(oy) * ow + ox] =
                    img.px[c * plane + std::size_t(y) * img.w + x];
            }
    return out;
}

} // namespace

Image apply_augment(const Image& img, const AugmentParams& p) {
    if (img.channels != 3) throw std::invalid_argument("apply_augment: expected 3 channels");
    Image out = img;
    const std::size_t plane = out.plane();
    float* r = out.px.data();
    float* g = out.px.data() + plane;
    float* b = out.px.data() + 2 * plane;

    if (p.brightness != 1.0)
        for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] = float(out.px[i] * p.brightness);

    if (p.contrast != 1.0) {
        // anchored at the mean luma of the image
        double mu = 0;
        for (std::size_t i = 0; i < plane; ++i) mu += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        mu /= double(plane);
        for (std::size_t i = 0; i < out.px.size(); ++i)
            out.px[i] = float(mu + (out.px[i] - mu) * p.contrast);
    }

    if (p.saturation != 1.0) {
        for (std::size_t i = 0; i < plane; ++i) {
            double l = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
            r[i] = float(l + (r[i] - l) * p.saturation);
            g[i] = float(l + (g[i] - l) * p.saturation);
            b[i] = float(l + (b[i] - l) * p.saturation);
        }
    }

    if (p.hue_angle != 0.0) {
        // hue rotation in YIQ space
        const double cs = std::cos(p.hue_angle), sn = std::sin(p.hue_angle);
        for (std::size_t i = 0; i < plane; ++i) {
            double Y = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
            double I = 0.596 * r[i] - 0.274 * g[i] - 0.322 * b[i];
            double Q = 0.211 * r[i] - 0.523 * g[i] + 0.312 * b[i];
            double I2 = I * cs - Q * sn;
            double Q2 = I * sn + Q * cs;
            r[i] = float(Y + 0.956 * I2 + 0.621 * Q2);
            g[i] = float(Y - 0.272 * I2 - 0.647 * Q2);
            b[i] = float(Y - 1.106 * I2 + 1.703 * Q2);
        }
    }

    for (auto& v : out.px) v = std::clamp(v, 0.0f, 1.0f);

    if (p.hflip)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < out.h; ++y) {
                float* row = out.px.data() + c * plane + std::size_t(y) * out.w;
                std::reverse(row, row + out.w);
            }
    if (p.vflip)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < out.h / 2; ++y)
                for (int x = 0; x < out.w; ++x)
                    std::swap(out.px[c * plane + std::size_t(y) * out.w + x],
                              out.px[c * plane + std::size_t(out.h - 1 - y) * out.w + x]);

    return rotate_quarter(out, p.quarter_turns);
}

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(img, sample_augment(cfg, rng));
}

// ------------------------------------------------------------------- splits

void SplitConfig::validate() const {
    for (double f : {train_fraction, validation_fraction, test_fraction, aux_v1_fraction,
                     aux_v2_fraction, dev_fraction})
        if (f < 0.0 || f > 1.0) throw std::invalid_argument("SplitConfig: fractions must be in [0,1]");
    if (std::abs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-9)
        throw std::invalid_argument("SplitConfig: train+validation+test fractions must sum to 1");
    if (aux_v1_fraction > aux_v2_fraction)
        throw std::invalid_argument("SplitConfig: aux_v1_fraction must be <= aux_v2_fraction");
    if (aux_v2_fraction + dev_fraction >= 1.0)
        throw std::invalid_argument("SplitConfig: aux + dev fractions leave no labeled patients");
}

SplitManifest split_dataset(const std::vector<ImageRecord>& records, const SplitConfig& cfg) {
    cfg.validate();

    // Distinct patients in first-appearance order, with class and record ids.
    struct Patient {
        std::string id;
        int class_label = -1;
        std::vector<std::string> record_ids;
    };
    std::vector<Patient> patients;
    std::map<std::string, std::size_t> index;
    for (const auto& rec : records) {
        auto [it, inserted] = index.try_emplace(rec.patient_id, patients.size());
        if (inserted) patients.push_back({rec.patient_id, rec.class_label.value_or(-1), {}});
        patients[it->second].record_ids.push_back(rec.id);
    }

    const int n = int(patients.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "split"));
    rng.shuffle(order.begin(), order.end());

    const int n_aux2 = int(std::llround(cfg.aux_v2_fraction * n));
    const int n_aux1 = int(std::llround(cfg.aux_v1_fraction * n));
    const int n_dev = int(std::llround(cfg.dev_fraction * n));
    const int n_labeled = n - n_aux2 - n_dev;
    if (n_labeled < 1) throw std::invalid_argument("split_dataset: no labeled patients left");

    SplitManifest out;
    auto emit = [&](std::vector<std::string>& dst, int patient_idx) {
        for (const auto& rid : patients[patient_idx].record_ids) dst.push_back(rid);
    };

    int cursor = 0;
    for (int i = 0; i < n_aux2; ++i, ++cursor) {
        emit(out.aux_v2, order[cursor]);
        if (i < n_aux1) emit(out.aux_v1, order[cursor]); // nested prefix: aux_v1 subset of aux_v2
    }
    for (int i = 0; i < n_dev; ++i, ++cursor) emit(out.development, order[cursor]);

    // Stratify the labeled 70/15/15 by class so tiny test sets stay balanced.
    std::map<int, std::vector<int>> by_class;
    for (; cursor < n; ++cursor) by_class[patients[order[cursor]].class_label].push_back(order[cursor]);
    for (auto& [cls, members] : by_class) {
        const int m = int(members.size());
        int n_tr = int(std::llround(cfg.train_fraction * m));
        int n_va = int(std::llround(cfg.validation_fraction * m));
        // Rounding must not starve a requested split of a small class: give
        // each nonzero-fraction split at least one patient while m permits.
        if (cfg.train_fraction > 0 && n_tr < 1 && m >= 1) n_tr = 1;
        if (cfg.validation_fraction > 0 && n_va < 1 && m >= 2) n_va = 1;
        n_tr = std::min(n_tr, m);
        if (n_tr + n_va > m) n_va = m - n_tr;
        int n_te = m - n_tr - n_va;
        if (cfg.test_fraction > 0 && n_te < 1 && m >= 3) {
            if (n_tr >= 2) --n_tr;
            else if (n_va >= 2) --n_va;
            n_te = m - n_tr - n_va;
        }
        for (int i = 0; i < m; ++i) {
            if (i < n_tr) emit(out.train, members[i]);
            else if (i < n_tr + n_va) emit(out.validation, members[i]);
            else emit(out.test, members[i]);
        }
    }
    if ((cfg.train_fraction > 0 && out.train.empty()) ||
        (cfg.validation_fraction > 0 && out.validation.empty()) ||
        (cfg.test_fraction > 0 && out.test.empty()))
        throw std::invalid_argument("split_dataset: too few labeled patients for the requested fractions");
    return out;
}

// ------------------------------------------------------------ manifest + I/O

namespace {

std::string split_name_for(const SplitManifest& s, const std::string& id) {
    auto contains = [&](const std::vector<std::string>& v) {
        return std::find(v.begin(), v.end(), id) != v.end();
    };
    if (contains(s.train)) return "train";
    if (contains(s.validation)) return "validation";
    if (contains(s.test)) return "test";
    if (contains(s.development)) return "development";
    if (contains(s.aux_v1)) return "aux_v1"; // implies aux_v2 membership
    if (contains(s.aux_v2)) return "aux_v2";
    return "";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

void save_manifest(const std::string& dir, const std::vector<ImageRecord>& records,
                   const SplitManifest& splits, const std::vector<double>& levels) {
    std::vector<double> sorted_levels = levels;
    std::sort(sorted_levels.begin(), sorted_levels.end(), std::greater<>());

    std::vector<const ImageRecord*> rows;
    for (const auto& r : records) rows.push_back(&r);
    std::sort(rows.begin(), rows.end(),
              [](const ImageRecord* a, const ImageRecord* b) { return a->id < b->id; });

    std::ofstream os(fs::path(dir) / "manifest.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("save_manifest: cannot write to " + dir);
    os << "id,patient_id,split,class";
    for (double lv : sorted_levels) os << ",mag_" << mag_tag(lv);
    os << "\n";
    for (const auto* r : rows) {
        const std::string split = split_name_for(splits, r->id);
        const bool unlabeled = split == "aux_v1" || split == "aux_v2";
        os << r->id << "," << r->patient_id << "," << split << ",";
        if (!unlabeled && r->class_label) os << *r->class_label;
        for (double lv : sorted_levels) {
            auto it = r->pyramid.find(mag_tag(lv));
            if (it == r->pyramid.end())
                throw std::runtime_error("save_manifest: record " + r->id + " missing level " +
                                         mag_tag(lv));
            os << "," << it->second;
        }
        os << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.csv");
    if (!is) throw std::runtime_error("load_dataset: cannot open manifest.csv under " + dir);

    Dataset ds;
    ds.dir = dir;

    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("manifest.csv: empty file (line 1)");
    auto header = split_csv_line(line);
    if (header.size() < 5 || header[0] != "id" || header[1] != "patient_id" || header[2] != "split" ||
        header[3] != "class")
        throw std::runtime_error("manifest.csv: bad header (line 1, column 1)");
    std::vector<std::string> level_tags;
    for (std::size_t i = 4; i < header.size(); ++i) {
        if (header[i].rfind("mag_", 0) != 0)
            throw std::runtime_error("manifest.csv: bad level column (line 1, column " +
                                     std::to_string(i + 1) + ")");
        std::string tag = header[i].substr(4);
        ds.levels.push_back(parse_mag_tag(tag));
        level_tags.push_back(tag);
    }

    std::set<std::string> seen;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error("manifest.csv: wrong cell count (line " + std::to_string(lineno) +
                                     ", column " + std::to_string(cells.size()) + ")");
        ImageRecord rec;
        rec.id = cells[0];
        rec.patient_id = cells[1];
        if (!seen.insert(rec.id).second)
            throw std::runtime_error("manifest.csv: duplicate record id " + rec.id + " (line " +
                                     std::to_string(lineno) + ", column 1)");
        const std::string& split = cells[2];
        if (!cells[3].empty()) {
            try {
                rec.class_label = std::stoi(cells[3]);
            } catch (const std::exception&) {
                throw std::runtime_error("manifest.csv: bad class (line " + std::to_string(lineno) +
                                         ", column 4)");
            }
        }
        for (std::size_t i = 0; i < level_tags.size(); ++i) {
            const std::string& rel = cells[4 + i];
            if (rel.empty())
                throw std::runtime_error("manifest.csv: empty path (line " + std::to_string(lineno) +
                                         ", column " + std::to_string(5 + i) + ")");
            if (!fs::exists(fs::path(dir) / rel))
                throw std::runtime_error("load_dataset: record " + rec.id + " references missing image " +
                                         rel);
            rec.pyramid[level_tags[i]] = rel;
        }

        if (split == "train") ds.splits.train.push_back(rec.id);
        else if (split == "validation") ds.splits.validation.push_back(rec.id);
        else if (split == "test") ds.splits.test.push_back(rec.id);
        else if (split == "development") ds.splits.development.push_back(rec.id);
        else if (split == "aux_v1") {
            ds.splits.aux_v1.push_back(rec.id);
            ds.splits.aux_v2.push_back(rec.id);
        } else if (split == "aux_v2") ds.splits.aux_v2.push_back(rec.id);
        else if (!split.empty())
            throw std::runtime_error("manifest.csv: unknown split '" + split + "' (line " +
                                     std::to_string(lineno) + ", column 3)");

        ds.records.push_back(std::move(rec));
    }
    return ds;
}

const ImageRecord& Dataset::record(const std::string& id) const {
    for (const auto& r : records)
        if (r.id == id) return r;
    throw std::out_of_range("dataset has no record " + id);
}

bool Dataset::has_record(const std::string& id) const {
    for (const auto& r : records)
        if (r.id == id) return true;
    return false;
}

Image load_record_image(const Dataset& ds, const std::string& id, double mag) {
    const auto& rec = ds.record(id);
    auto it = rec.pyramid.find(mag_tag(mag));
    if (it == rec.pyramid.end())
        throw std::out_of_range("record " + id + " has no level " + mag_tag(mag));
    return read_png((fs::path(ds.dir) / it->second).string());
}

// ----------------------------------------------------------- standardization

ChannelStats compute_standardization(const Dataset& ds, const std::vector<std::string>& train_ids,
                                     double mag) {
    if (train_ids.empty())
        throw std::invalid_argument("compute_standardization: empty training set");
    ChannelStats stats;
    stats.mean.assign(3, 0.0);
    stats.stddev.assign(3, 0.0);
    std::vector<double> sum(3, 0.0), sq(3, 0.0);
    std::size_t count = 0;
    for (const auto& id : train_ids) {
        Image img = load_record_image(ds, id, mag);
        const std::size_t plane = img.plane();
        for (int c = 0; c < 3; ++c) {
            const float* p = img.px.data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum[c] += p[i];
                sq[c] += double(p[i]) * p[i];
            }
        }
        count += plane;
    }
    for (int c = 0; c < 3; ++c) {
        stats.mean[c] = sum[c] / double(count);
        double var = sq[c] / double(count) - stats.mean[c] * stats.mean[c];
        stats.stddev[c] = std::max(std::sqrt(std::max(var, 0.0)), 1e-6);
    }
    return stats;
}

void standardize(Image& img, const ChannelStats& stats) {
    const std::size_t plane = img.plane();
    for (int c = 0; c < img.channels; ++c) {
        const float m = float(stats.mean[c]), s = float(stats.stddev[c]);
        float* p = img.px.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) / s;
    }
}

std::string train_fingerprint(const std::vector<std::string>& train_ids) {
    std::vector<std::string> sorted = train_ids;
    std::sort(sorted.begin(), sorted.end());
    std::uint64_t h = hash_string("train-split");
    for (const auto& id : sorted) h = hash_combine(h, hash_string(id));
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_stats(const std::string& dir, const std::map<std::string, ChannelStats>& per_mag,
                const std::string& fingerprint) {
    nlohmann::json j;
    j["train_fingerprint"] = fingerprint;
    for (const auto& [tag, stats] : per_mag) {
        j["magnifications"][tag]["mean"] = stats.mean;
        j["magnifications"][tag]["std"] = stats.stddev;
    }
    std::ofstream os(fs::path(dir) / "stats.json", std::ios::trunc);
    if (!os) throw std::runtime_error("save_stats: cannot write to " + dir);
    os << j.dump(2) << "\n";
}

std::map<std::string, ChannelStats> load_stats(const std::string& dir, std::string* fingerprint_out) {
    std::ifstream is(fs::path(dir) / "stats.json");
    if (!is) throw std::runtime_error("load_stats: cannot open stats.json under " + dir);
    nlohmann::json j;
    is >> j;
    if (fingerprint_out) *fingerprint_out = j.at("train_fingerprint").get<std::string>();
    std::map<std::string, ChannelStats> out;
    for (auto& [tag, entry] : j.at("magnifications").items()) {
        ChannelStats stats;
        stats.mean = entry.at("mean").get<std::vector<double>>();
        stats.stddev = entry.at("std").get<std::vector<double>>();
        out[tag] = stats;
    }
    return out;
}

} // namespace resdistill
