#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "resdistill/common.hpp"

namespace resdistill {

// Planar [C,H,W] float raster, values in [0,1] for stored images.
struct Image {
    int channels = 0;
    int h = 0;
    int w = 0;
    std::vector<float> px;

    std::size_t plane() const { return std::size_t(h) * w; }
    std::size_t size() const { return std::size_t(channels) * plane(); }
    float& at(int c, int y, int x) { return px[c * plane() + std::size_t(y) * w + x]; }
    float at(int c, int y, int x) const { return px[c * plane() + std::size_t(y) * w + x]; }
};

Image make_image(int channels, int h, int w, float fill = 0.0f);

// 8-bit PNG I/O. Written images are quantized with round(v*255); reading maps
// bytes back to v/255, so write-then-read is the quantization fixed point.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);
Image quantize_image(const Image& img);

// Magnification relative to the base level, e.g. 1.0, 0.5, 0.25, 0.125.
std::string mag_tag(double value);
double parse_mag_tag(const std::string& tag);
void validate_mag(double value);

struct ImageRecord {
    std::string id;
    std::string patient_id;
    std::optional<int> class_label; // absent for auxiliary records
    std::map<std::string, std::string> pyramid; // mag tag -> path relative to dataset dir
};

struct SplitManifest {
    std::vector<std::string> train, validation, test;
    std::vector<std::string> aux_v1, aux_v2; // aux_v1 is a subset of aux_v2
    std::vector<std::string> development;
};

struct GenConfig {
    int num_patients = 60;
    int classes = 3;
    int base_size = 256;
    std::vector<double> levels{1.0, 0.5, 0.25, 0.125};
    std::uint64_t seed = 0;
};

// Renders every patient's images and pyramids under <out_dir>/images/ and
// returns the records (all carrying their true class; split assignment later
// decides which become unlabeled auxiliaries). Byte-deterministic per seed.
std::vector<ImageRecord> gen_synthetic_dataset(const GenConfig& cfg, const std::string& out_dir);

// Every level resampled from the base directly (never level-from-level).
std::vector<std::pair<double, Image>> build_pyramid(const Image& base, const std::vector<double>& levels);

struct AugmentConfig {
    double brightness = 0.1; // multiplicative jitter half-range
    double contrast = 0.1;
    double saturation = 0.1;
    double hue = 0.05;       // fraction of a full hue rotation
    double flip_prob = 0.5;  // applied independently to each axis
    bool rotate = true;      // uniform choice from {0,90,180,270} degrees
    void validate() const;
};

// One sampled set of augmentation decisions, applicable to several images
// (teacher and student views of a record must share the same params).
struct AugmentParams {
    double brightness = 1.0, contrast = 1.0, saturation = 1.0;
    double hue_angle = 0.0; // radians
    bool hflip = false, vflip = false;
    int quarter_turns = 0;
};

AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng);
Image apply_augment(const Image& img, const AugmentParams& p);
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

struct ChannelStats {
    std::vector<double> mean, stddev;
};

struct SplitConfig {
    double train_fraction = 0.70;
    double validation_fraction = 0.15;
    double test_fraction = 0.15;
    double aux_v1_fraction = 0.0; // of all patients; nested inside aux_v2
    double aux_v2_fraction = 0.0;
    double dev_fraction = 0.0;
    std::uint64_t seed = 0;
    void validate() const;
};

// Patient-level split: no patient straddles train/validation/test/aux/dev.
// Labeled splits are stratified by class so small test sets stay balanced.
SplitManifest split_dataset(const std::vector<ImageRecord>& records, const SplitConfig& cfg);

// A dataset directory: manifest.csv + images/ + stats.json.
struct Dataset {
    std::string dir;
    std::vector<ImageRecord> records;
    SplitManifest splits;
    std::vector<double> levels;

    const ImageRecord& record(const std::string& id) const;
    bool has_record(const std::string& id) const;
};

void save_manifest(const std::string& dir, const std::vector<ImageRecord>& records,
                   const SplitManifest& splits, const std::vector<double>& levels);
Dataset load_dataset(const std::string& dir);

Image load_record_image(const Dataset& ds, const std::string& id, double mag);

// Per-channel statistics over the train split only, at one magnification.
ChannelStats compute_standardization(const Dataset& ds, const std::vector<std::string>& train_ids,
                                     double mag);
void standardize(Image& img, const ChannelStats& stats);

// Stable digest of the sorted train ids; stored with stats.json so consumers
// can verify which training pool produced the statistics.
std::string train_fingerprint(const std::vector<std::string>& train_ids);

void save_stats(const std::string& dir, const std::map<std::string, ChannelStats>& per_mag,
                const std::string& fingerprint);
std::map<std::string, ChannelStats> load_stats(const std::string& dir, std::string* fingerprint_out);

} // namespace resdistill
