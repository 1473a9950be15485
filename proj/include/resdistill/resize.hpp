#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "resdistill/tensor.hpp"

namespace resdistill {

enum class ResizeMode { MP, INT, MP_AND_INT, NONE };

inline const char* resize_mode_name(ResizeMode m) {
    switch (m) {
        case ResizeMode::MP: return "MP";
        case ResizeMode::INT: return "INT";
        case ResizeMode::MP_AND_INT: return "MP_AND_INT";
        case ResizeMode::NONE: return "NONE";
    }
    return "?";
}

inline ResizeMode resize_mode_from_name(const std::string& s) {
    if (s == "MP") return ResizeMode::MP;
    if (s == "INT") return ResizeMode::INT;
    if (s == "MP_AND_INT") return ResizeMode::MP_AND_INT;
    if (s == "NONE") return ResizeMode::NONE;
    throw std::invalid_argument("unknown resize mode: " + s);
}

namespace detail {

// One output row of sampling taps: source indices (edge-clamped) and
// normalized weights.
struct ResampleTaps {
    std::vector<int> index;
    std::vector<double> weight;
    std::vector<int> offset; // start into index/weight per output position
};

inline double lanczos3(double t) {
    t = std::abs(t);
    if (t < 1e-12) return 1.0;
    if (t >= 3.0) return 0.0;
    const double pi = 3.14159265358979323846;
    return 3.0 * std::sin(pi * t) * std::sin(pi * t / 3.0) / (pi * pi * t * t);
}

// Tap plan for one dimension of a Lanczos-3 resample. For minification the
// kernel support is stretched by the scale factor, which is what gives the
// filter its anti-aliasing behaviour; weights are normalized per output pixel.
inline ResampleTaps lanczos_taps(int in_size, int out_size) {
    ResampleTaps taps;
    const double scale = double(in_size) / double(out_size);
    const double fscale = std::max(scale, 1.0);
    const double support = 3.0 * fscale;
    taps.offset.reserve(out_size + 1);
    taps.offset.push_back(0);
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const int lo = int(std::ceil(center - support));
        const int hi = int(std::floor(center + support));
        double sum = 0.0;
        const std::size_t begin = taps.weight.size();
        for (int i = lo; i <= hi; ++i) {
            double w = lanczos3((i - center) / fscale);
            if (w == 0.0) continue;
            taps.index.push_back(std::clamp(i, 0, in_size - 1));
            taps.weight.push_back(w);
            sum += w;
        }
        for (std::size_t k = begin; k < taps.weight.size(); ++k) taps.weight[k] /= sum;
        taps.offset.push_back(int(taps.weight.size()));
    }
    return taps;
}

inline double catmull_rom(double t) {
    t = std::abs(t);
    if (t < 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

// Resample the rows of a [rows x in_w] plane into [rows x out_w] using a
// precomputed tap plan.
template <typename T>
void apply_taps_rows(const T* in, int rows, int in_w, const ResampleTaps& taps, int out_w, T* out) {
    for (int r = 0; r < rows; ++r) {
        const T* src = in + std::size_t(r) * in_w;
        T* dst = out + std::size_t(r) * out_w;
        for (int o = 0; o < out_w; ++o) {
            double acc = 0.0;
            for (int k = taps.offset[o]; k < taps.offset[o + 1]; ++k)
                acc += taps.weight[k] * double(src[taps.index[k]]);
            dst[o] = T(acc);
        }
    }
}

template <typename T>
void transpose_plane(const T* in, int h, int w, T* out) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[std::size_t(x) * h + y] = in[std::size_t(y) * w + x];
}

} // namespace detail

// Separable Lanczos-3 resample of a [C,H,W] raster. For minification the
// kernel support scales with the ratio (anti-aliasing); weights are
// normalized per output pixel and the result is clamped to [clamp_lo,
// clamp_hi], the valid pixel range.
template <typename T>
std::vector<T> lanczos_resize(const std::vector<T>& image, int channels, int h, int w,
                              int out_h, int out_w, T clamp_lo = T(0), T clamp_hi = T(1)) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("lanczos_resize: output dims must be >= 1");
    if (channels < 1 || h < 1 || w < 1 || image.size() != std::size_t(channels) * h * w)
        throw std::invalid_argument("lanczos_resize: bad input raster");

    const auto taps_x = detail::lanczos_taps(w, out_w);
    const auto taps_y = detail::lanczos_taps(h, out_h);

    std::vector<T> out(std::size_t(channels) * out_h * out_w);
    std::vector<T> mid(std::size_t(h) * out_w);
    std::vector<T> mid_t(std::size_t(out_w) * h);
    std::vector<T> col(std::size_t(out_w) * out_h);
    for (int c = 0; c < channels; ++c) {
        const T* src = image.data() + std::size_t(c) * h * w;
        // horizontal, then vertical via transpose
        detail::apply_taps_rows(src, h, w, taps_x, out_w, mid.data());
        detail::transpose_plane(mid.data(), h, out_w, mid_t.data());
        detail::apply_taps_rows(mid_t.data(), out_w, h, taps_y, out_h, col.data());
        T* dst = out.data() + std::size_t(c) * out_h * out_w;
        detail::transpose_plane(col.data(), out_w, out_h, dst);
        for (std::size_t i = 0; i < std::size_t(out_h) * out_w; ++i)
            dst[i] = std::clamp(dst[i], clamp_lo, clamp_hi);
    }
    return out;
}

// Catmull-Rom (a = -0.5) bicubic resample of a [C,H,W] tensor with the
// half-pixel-center convention and edge clamping. Forward-only: it is applied
// to frozen teacher maps, so no gradient path is recorded. Values are not
// clamped (feature maps are signed).
template <typename T>
TensorPtr<T> bicubic_resize(const TensorPtr<T>& map, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: output dims must be >= 1");
    if (map->shape.size() != 3) throw std::invalid_argument("bicubic_resize: map must be [C,H,W]");
    const int c = map->shape[0], h = map->shape[1], w = map->shape[2];

    const double sx = double(w) / double(out_w);
    const double sy = double(h) / double(out_h);

    // Per-axis taps: 4 source indices + weights per output position.
    std::vector<int> ix(std::size_t(out_w) * 4);
    std::vector<double> wx(std::size_t(out_w) * 4);
    for (int o = 0; o < out_w; ++o) {
        double center = (o + 0.5) * sx - 0.5;
        int base = int(std::floor(center)) - 1;
        for (int k = 0; k < 4; ++k) {
            ix[o * 4 + k] = std::clamp(base + k, 0, w - 1);
            wx[o * 4 + k] = detail::catmull_rom(center - (base + k));
        }
    }
    std::vector<int> iy(std::size_t(out_h) * 4);
    std::vector<double> wy(std::size_t(out_h) * 4);
    for (int o = 0; o < out_h; ++o) {
        double center = (o + 0.5) * sy - 0.5;
        int base = int(std::floor(center)) - 1;
        for (int k = 0; k < 4; ++k) {
            iy[o * 4 + k] = std::clamp(base + k, 0, h - 1);
            wy[o * 4 + k] = detail::catmull_rom(center - (base + k));
        }
    }

    auto out = make_tensor<T>({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        const T* src = map->data.data() + std::size_t(ch) * h * w;
        T* dst = out->data.data() + std::size_t(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double acc = 0.0;
                for (int ky = 0; ky < 4; ++ky) {
                    const T* row = src + std::size_t(iy[oy * 4 + ky]) * w;
                    double racc = 0.0;
                    for (int kx = 0; kx < 4; ++kx)
                        racc += wx[ox * 4 + kx] * double(row[ix[ox * 4 + kx]]);
                    acc += wy[oy * 4 + ky] * racc;
                }
                dst[std::size_t(oy) * out_w + ox] = T(acc);
            }
        }
    }
    return out;
}

// Max over contiguous floor-partition regions: region r of H spans
// [floor(r*H/out), floor((r+1)*H/out)). Covers every input element even for
// non-integer ratios. Forward-only, like bicubic_resize.
template <typename T>
TensorPtr<T> adaptive_max_pool(const TensorPtr<T>& map, int out_h, int out_w) {
    if (map->shape.size() != 3) throw std::invalid_argument("adaptive_max_pool: map must be [C,H,W]");
    const int c = map->shape[0], h = map->shape[1], w = map->shape[2];
    if (out_h < 1 || out_w < 1 || out_h > h || out_w > w)
        throw std::invalid_argument("adaptive_max_pool: output dims must be in [1, input dims]");

    auto out = make_tensor<T>({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        const T* src = map->data.data() + std::size_t(ch) * h * w;
        T* dst = out->data.data() + std::size_t(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            int y0 = int(std::int64_t(oy) * h / out_h);
            int y1 = int(std::int64_t(oy + 1) * h / out_h);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0 = int(std::int64_t(ox) * w / out_w);
                int x1 = int(std::int64_t(ox + 1) * w / out_w);
                T best = src[std::size_t(y0) * w + x0];
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) best = std::max(best, src[std::size_t(y) * w + x]);
                dst[std::size_t(oy) * out_w + ox] = best;
            }
        }
    }
    return out;
}

// The resized-teacher-map bundle the pixel loss consumes: one map per active
// resize mode, each shaped exactly like the student map.
template <typename T>
struct MapPair {
    std::vector<TensorPtr<T>> resized_teacher_maps;
    TensorPtr<T> student_map;
};

template <typename T>
MapPair<T> resize_teacher_maps(const TensorPtr<T>& teacher_map, const std::vector<int>& student_shape,
                               ResizeMode mode) {
    if (mode == ResizeMode::NONE)
        throw std::invalid_argument("resize_teacher_maps: mode NONE has no maps to resize");
    if (teacher_map->shape.size() != 3 || student_shape.size() != 3)
        throw std::invalid_argument("resize_teacher_maps: maps must be [C,H,W]");
    if (teacher_map->shape[0] != student_shape[0])
        throw std::invalid_argument("resize_teacher_maps: channel counts disagree");
    const int oh = student_shape[1], ow = student_shape[2];
    if (oh > teacher_map->shape[1] || ow > teacher_map->shape[2])
        throw std::invalid_argument("resize_teacher_maps: student map larger than teacher map");

    MapPair<T> pair;
    if (mode == ResizeMode::MP || mode == ResizeMode::MP_AND_INT)
        pair.resized_teacher_maps.push_back(adaptive_max_pool(teacher_map, oh, ow));
    if (mode == ResizeMode::INT || mode == ResizeMode::MP_AND_INT)
        pair.resized_teacher_maps.push_back(bicubic_resize(teacher_map, oh, ow));
    return pair;
}

} // namespace resdistill
