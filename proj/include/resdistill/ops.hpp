#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "resdistill/gemm.hpp"
#include "resdistill/tensor.hpp"

namespace resdistill {

namespace detail {

template <typename T>
void im2col(const T* img, int ch, int h, int w, int k, int stride, int pad,
            int oh, int ow, T* col) {
    // col is [(ch*k*k) x (oh*ow)], zero-filled by the caller for padding.
    const int plane = oh * ow;
    for (int c = 0; c < ch; ++c) {
        const T* src = img + std::size_t(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* dst = col + std::size_t((c * k + ki) * k + kj) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    const T* srow = src + std::size_t(iy) * w;
                    T* drow = dst + std::size_t(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) drow[ox] = srow[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int ch, int h, int w, int k, int stride, int pad,
                int oh, int ow, T* img) {
    const int plane = oh * ow;
    for (int c = 0; c < ch; ++c) {
        T* dst = img + std::size_t(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* src = col + std::size_t((c * k + ki) * k + kj) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    T* drow = dst + std::size_t(iy) * w;
                    const T* srow = src + std::size_t(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

// Rows of length K viewed over the trailing dimension.
inline std::pair<std::size_t, int> row_view(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("expected a tensor with at least one dim");
    int k = shape.back();
    std::size_t rows = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= std::size_t(shape[i]);
    return {rows, k};
}

template <typename T>
void check_distribution_rows(const TensorPtr<T>& t, const char* who) {
    auto [rows, k] = row_view(t->shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = t->data.data() + r * k;
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            if (row[i] < T(-1e-9))
                throw std::domain_error(std::string(who) + ": negative probability entry");
            sum += double(row[i]);
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::domain_error(std::string(who) + ": row does not sum to 1");
    }
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (!same_shape(a, b))
        throw std::invalid_argument("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (a->requires_grad || b->requires_grad) {
        out->requires_grad = true;
        out->parents = {a, b};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, a, b]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, T factor) {
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = factor * a->data[i];
    if (a->requires_grad) {
        out->requires_grad = true;
        out->parents = {a};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, a, factor]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += factor * o->grad[i];
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& a) {
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] > T(0) ? a->data[i] : T(0);
    if (a->requires_grad) {
        out->requires_grad = true;
        out->parents = {a};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, a]() {
            a->ensure_grad();
            // Subgradient at exactly 0 is taken as 0.
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                if (a->data[i] > T(0)) a->grad[i] += o->grad[i];
        };
    }
    return out;
}

// -------------------------------------------------------------------- linear

template <typename T>
TensorPtr<T> linear(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias) {
    if (input->shape.size() != 2) throw std::invalid_argument("linear: input must be [B,D_in]");
    if (weight->shape.size() != 2) throw std::invalid_argument("linear: weight must be [D_out,D_in]");
    const int b = input->shape[0], din = input->shape[1];
    const int dout = weight->shape[0];
    if (weight->shape[1] != din)
        throw std::invalid_argument("linear: inner dims disagree (" + std::to_string(din) + " vs " +
                                    std::to_string(weight->shape[1]) + ")");
    if (bias->shape.size() != 1 || bias->shape[0] != dout)
        throw std::invalid_argument("linear: bias must be [D_out]");

    auto out = make_tensor<T>({b, dout});
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < dout; ++j) out->data[std::size_t(i) * dout + j] = bias->data[j];
    // out += input[b,din] · weight[dout,din]^T
    gemm_nt(b, dout, din, input->data.data(), weight->data.data(), out->data.data());

    if (input->requires_grad || weight->requires_grad || bias->requires_grad) {
        out->requires_grad = true;
        out->parents = {input, weight, bias};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, input, weight, bias, b, din, dout]() {
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int i = 0; i < b; ++i)
                    for (int j = 0; j < dout; ++j) bias->grad[j] += o->grad[std::size_t(i) * dout + j];
            }
            if (weight->requires_grad) {
                weight->ensure_grad();
                // dW[dout,din] += dOut[b,dout]^T · input[b,din]
                gemm_tn(dout, din, b, o->grad.data(), input->data.data(), weight->grad.data());
            }
            if (input->requires_grad) {
                input->ensure_grad();
                // dIn[b,din] += dOut[b,dout] · weight[dout,din]
                gemm_nn(b, din, dout, o->grad.data(), weight->data.data(), input->grad.data());
            }
        };
    }
    return out;
}

// -------------------------------------------------------------------- conv2d

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding) {
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    if (weight->shape.size() != 4 || weight->shape[2] != weight->shape[3])
        throw std::invalid_argument("conv2d: weight must be [C_out,C_in,K,K]");
    const bool batched = input->shape.size() == 4;
    if (!batched && input->shape.size() != 3)
        throw std::invalid_argument("conv2d: input must be [C,H,W] or [B,C,H,W]");

    const int bsz = batched ? input->shape[0] : 1;
    const int cin = input->shape[batched ? 1 : 0];
    const int h = input->shape[batched ? 2 : 1];
    const int w = input->shape[batched ? 3 : 2];
    const int cout = weight->shape[0];
    const int k = weight->shape[2];
    if (weight->shape[1] != cin)
        throw std::invalid_argument("conv2d: channel counts disagree (input " + std::to_string(cin) +
                                    ", weight " + std::to_string(weight->shape[1]) + ")");
    if (bias->shape.size() != 1 || bias->shape[0] != cout)
        throw std::invalid_argument("conv2d: bias must be [C_out]");

    const int oh = (h + 2 * padding - k) / stride + 1;
    const int ow = (w + 2 * padding - k) / stride + 1;
    if (h + 2 * padding < k || w + 2 * padding < k || oh <= 0 || ow <= 0)
        throw std::domain_error("conv2d: kernel does not fit padded input");

    std::vector<int> out_shape = batched ? std::vector<int>{bsz, cout, oh, ow}
                                         : std::vector<int>{cout, oh, ow};
    auto out = make_tensor<T>(out_shape);

    const std::size_t in_sample = std::size_t(cin) * h * w;
    const std::size_t out_sample = std::size_t(cout) * oh * ow;
    const int ckk = cin * k * k;
    const int plane = oh * ow;

    const bool track = input->requires_grad || weight->requires_grad || bias->requires_grad;
    // im2col buffers are kept when gradients are needed; backward reuses them.
    auto cols = std::make_shared<std::vector<T>>();
    std::vector<T> scratch;
    if (track) cols->assign(std::size_t(bsz) * ckk * plane, T(0));
    else scratch.assign(std::size_t(ckk) * plane, T(0));

    for (int n = 0; n < bsz; ++n) {
        T* col = track ? cols->data() + std::size_t(n) * ckk * plane : scratch.data();
        if (!track) std::fill(scratch.begin(), scratch.end(), T(0));
        detail::im2col(input->data.data() + std::size_t(n) * in_sample, cin, h, w, k, stride, padding, oh, ow, col);
        T* dst = out->data.data() + std::size_t(n) * out_sample;
        for (int c = 0; c < cout; ++c) {
            T bv = bias->data[c];
            T* row = dst + std::size_t(c) * plane;
            for (int j = 0; j < plane; ++j) row[j] = bv;
        }
        gemm_nn(cout, plane, ckk, weight->data.data(), col, dst);
    }

    if (track) {
        out->requires_grad = true;
        out->parents = {input, weight, bias};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, input, weight, bias, cols, bsz, cin, h, w, k, stride, padding, oh, ow]() {
            const int ckk = cin * k * k;
            const int plane = oh * ow;
            const int cout = weight->shape[0];
            const std::size_t in_sample = std::size_t(cin) * h * w;
            const std::size_t out_sample = std::size_t(cout) * plane;
            std::vector<T> dcol;
            if (input->requires_grad) dcol.resize(std::size_t(ckk) * plane);
            for (int n = 0; n < bsz; ++n) {
                const T* dout_s = o->grad.data() + std::size_t(n) * out_sample;
                const T* col = cols->data() + std::size_t(n) * ckk * plane;
                if (bias->requires_grad) {
                    bias->ensure_grad();
                    for (int c = 0; c < cout; ++c) {
                        const T* row = dout_s + std::size_t(c) * plane;
                        T acc = T(0);
                        for (int j = 0; j < plane; ++j) acc += row[j];
                        bias->grad[c] += acc;
                    }
                }
                if (weight->requires_grad) {
                    weight->ensure_grad();
                    // dW[cout,ckk] += dOut[cout,plane] · col[ckk,plane]^T
                    gemm_nt(cout, ckk, plane, dout_s, col, weight->grad.data());
                }
                if (input->requires_grad) {
                    input->ensure_grad();
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    // dcol[ckk,plane] += W[cout,ckk]^T · dOut[cout,plane]
                    gemm_tn(ckk, plane, cout, weight->data.data(), dout_s, dcol.data());
                    detail::col2im_add(dcol.data(), cin, h, w, k, stride, padding, oh, ow,
                                       input->grad.data() + std::size_t(n) * in_sample);
                }
            }
        };
    }
    return out;
}

// ------------------------------------------------------------------- pooling

template <typename T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& input) {
    if (input->shape.size() != 4) throw std::invalid_argument("global_avg_pool: input must be [B,C,H,W]");
    const int b = input->shape[0], c = input->shape[1], h = input->shape[2], w = input->shape[3];
    const std::size_t plane = std::size_t(h) * w;
    auto out = make_tensor<T>({b, c});
    for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = input->data.data() + (std::size_t(n) * c + ch) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += double(src[i]);
            out->data[std::size_t(n) * c + ch] = T(acc / double(plane));
        }
    if (input->requires_grad) {
        out->requires_grad = true;
        out->parents = {input};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, input, b, c, plane]() {
            input->ensure_grad();
            for (int n = 0; n < b; ++n)
                for (int ch = 0; ch < c; ++ch) {
                    T g = o->grad[std::size_t(n) * c + ch] / T(plane);
                    T* dst = input->grad.data() + (std::size_t(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) dst[i] += g;
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------- group norm

template <typename T>
TensorPtr<T> group_norm(const TensorPtr<T>& input, int num_groups, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, T eps = T(1e-5)) {
    if (input->shape.size() != 4) throw std::invalid_argument("group_norm: input must be [B,C,H,W]");
    const int b = input->shape[0], c = input->shape[1], h = input->shape[2], w = input->shape[3];
    if (num_groups <= 0 || c % num_groups != 0)
        throw std::invalid_argument("group_norm: channel count " + std::to_string(c) +
                                    " not divisible by num_groups " + std::to_string(num_groups));
    if (gamma->shape != std::vector<int>{c} || beta->shape != std::vector<int>{c})
        throw std::invalid_argument("group_norm: gamma/beta must be [C]");

    const int cpg = c / num_groups;
    const std::size_t plane = std::size_t(h) * w;
    const std::size_t gsize = std::size_t(cpg) * plane;

    auto out = make_tensor<T>(input->shape);
    // Cached per (sample, group): mean and 1/sqrt(var+eps). Population variance.
    auto stats = std::make_shared<std::vector<T>>(std::size_t(b) * num_groups * 2);

    for (int n = 0; n < b; ++n) {
        for (int g = 0; g < num_groups; ++g) {
            const T* src = input->data.data() + (std::size_t(n) * c + std::size_t(g) * cpg) * plane;
            double sum = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) {
                sum += double(src[i]);
                sq += double(src[i]) * double(src[i]);
            }
            double mean = sum / double(gsize);
            double var = sq / double(gsize) - mean * mean;
            if (var < 0.0) var = 0.0;
            T inv = T(1.0 / std::sqrt(var + double(eps)));
            (*stats)[(std::size_t(n) * num_groups + g) * 2] = T(mean);
            (*stats)[(std::size_t(n) * num_groups + g) * 2 + 1] = inv;
            T* dst = out->data.data() + (std::size_t(n) * c + std::size_t(g) * cpg) * plane;
            for (int cc = 0; cc < cpg; ++cc) {
                T ga = gamma->data[g * cpg + cc], be = beta->data[g * cpg + cc];
                const T* s = src + std::size_t(cc) * plane;
                T* d = dst + std::size_t(cc) * plane;
                for (std::size_t i = 0; i < plane; ++i) d[i] = ga * (s[i] - T(mean)) * inv + be;
            }
        }
    }

    if (input->requires_grad || gamma->requires_grad || beta->requires_grad) {
        out->requires_grad = true;
        out->parents = {input, gamma, beta};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, input, gamma, beta, stats, b, c, num_groups, cpg, plane, gsize]() {
            for (int n = 0; n < b; ++n) {
                for (int g = 0; g < num_groups; ++g) {
                    const std::size_t base = (std::size_t(n) * c + std::size_t(g) * cpg) * plane;
                    const T mean = (*stats)[(std::size_t(n) * num_groups + g) * 2];
                    const T inv = (*stats)[(std::size_t(n) * num_groups + g) * 2 + 1];
                    const T* x = input->data.data() + base;
                    const T* dy = o->grad.data() + base;

                    if (gamma->requires_grad || beta->requires_grad) {
                        gamma->ensure_grad();
                        beta->ensure_grad();
                        for (int cc = 0; cc < cpg; ++cc) {
                            const T* xs = x + std::size_t(cc) * plane;
                            const T* ds = dy + std::size_t(cc) * plane;
                            double dg = 0.0, db = 0.0;
                            for (std::size_t i = 0; i < plane; ++i) {
                                dg += double(ds[i]) * double((xs[i] - mean) * inv);
                                db += double(ds[i]);
                            }
                            if (gamma->requires_grad) gamma->grad[g * cpg + cc] += T(dg);
                            if (beta->requires_grad) beta->grad[g * cpg + cc] += T(db);
                        }
                    }
                    if (input->requires_grad) {
                        input->ensure_grad();
                        // dx = inv·(dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
                        double s1 = 0.0, s2 = 0.0;
                        for (int cc = 0; cc < cpg; ++cc) {
                            T ga = gamma->data[g * cpg + cc];
                            const T* xs = x + std::size_t(cc) * plane;
                            const T* ds = dy + std::size_t(cc) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                double dxh = double(ga) * double(ds[i]);
                                double xh = double((xs[i] - mean) * inv);
                                s1 += dxh;
                                s2 += dxh * xh;
                            }
                        }
                        s1 /= double(gsize);
                        s2 /= double(gsize);
                        T* dx = input->grad.data() + base;
                        for (int cc = 0; cc < cpg; ++cc) {
                            T ga = gamma->data[g * cpg + cc];
                            const T* xs = x + std::size_t(cc) * plane;
                            const T* ds = dy + std::size_t(cc) * plane;
                            T* dd = dx + std::size_t(cc) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                double dxh = double(ga) * double(ds[i]);
                                double xh = double((xs[i] - mean) * inv);
                                dd[i] += T(double(inv) * (dxh - s1 - xh * s2));
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ------------------------------------------------------- softmax and losses

template <typename T>
TensorPtr<T> softmax_with_temperature(const TensorPtr<T>& logits, double temperature) {
    if (temperature <= 0.0) throw std::domain_error("softmax_with_temperature: T must be > 0");
    auto [rows, k] = detail::row_view(logits->shape);
    auto out = make_tensor<T>(logits->shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits->data.data() + r * k;
        T* p = out->data.data() + r * k;
        double mx = -1e300;
        for (int i = 0; i < k; ++i) mx = std::max(mx, double(z[i]) / temperature);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            double e = std::exp(double(z[i]) / temperature - mx);
            p[i] = T(e);
            sum += e;
        }
        for (int i = 0; i < k; ++i) p[i] = T(double(p[i]) / sum);
    }
    if (logits->requires_grad) {
        out->requires_grad = true;
        out->parents = {logits};
        Tensor<T>* o = out.get();
        std::size_t rows_c = rows;
        int k_c = k;
        out->backward_fn = [o, logits, temperature, rows_c, k_c]() {
            logits->ensure_grad();
            for (std::size_t r = 0; r < rows_c; ++r) {
                const T* p = o->data.data() + r * k_c;
                const T* dy = o->grad.data() + r * k_c;
                T* dz = logits->grad.data() + r * k_c;
                double dot = 0.0;
                for (int i = 0; i < k_c; ++i) dot += double(dy[i]) * double(p[i]);
                for (int i = 0; i < k_c; ++i)
                    dz[i] += T(double(p[i]) * (double(dy[i]) - dot) / temperature);
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> kl_divergence(const TensorPtr<T>& p, const TensorPtr<T>& q) {
    if (!same_shape(p, q))
        throw std::invalid_argument("kl_divergence: shape mismatch");
    detail::check_distribution_rows(p, "kl_divergence p");
    detail::check_distribution_rows(q, "kl_divergence q");
    auto [rows, k] = detail::row_view(p->shape);
    constexpr double kFloor = 1e-12;

    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* pr = p->data.data() + r * k;
        const T* qr = q->data.data() + r * k;
        for (int i = 0; i < k; ++i) {
            double pv = std::max(double(pr[i]), kFloor);
            double qv = std::max(double(qr[i]), kFloor);
            total += pv * std::log(pv / qv);
        }
    }
    auto out = scalar_tensor<T>(T(total / double(rows)));
    if (p->requires_grad || q->requires_grad) {
        out->requires_grad = true;
        out->parents = {p, q};
        Tensor<T>* o = out.get();
        std::size_t rows_c = rows;
        int k_c = k;
        out->backward_fn = [o, p, q, rows_c, k_c]() {
            const double g = double(o->grad[0]) / double(rows_c);
            for (std::size_t r = 0; r < rows_c; ++r) {
                const T* pr = p->data.data() + r * k_c;
                const T* qr = q->data.data() + r * k_c;
                for (int i = 0; i < k_c; ++i) {
                    double pv = double(pr[i]), qv = double(qr[i]);
                    bool p_floored = pv < kFloor, q_floored = qv < kFloor;
                    if (p_floored) pv = kFloor;
                    if (q_floored) qv = kFloor;
                    if (p->requires_grad && !p_floored) {
                        p->ensure_grad();
                        p->grad[r * k_c + i] += T(g * (std::log(pv / qv) + 1.0));
                    }
                    if (q->requires_grad && !q_floored) {
                        q->ensure_grad();
                        q->grad[r * k_c + i] += T(-g * pv / qv);
                    }
                }
            }
        };
    }
    return out;
}

// Distillation soft-target loss: KL(σ(t/T) ‖ σ(s/T)) · T². The teacher side is
// a constant: no gradient reaches teacher_logits even if it tracks gradients.
template <typename T>
TensorPtr<T> soft_loss(const TensorPtr<T>& teacher_logits, const TensorPtr<T>& student_logits,
                       double temperature) {
    if (temperature <= 0.0) throw std::domain_error("soft_loss: T must be > 0");
    if (!same_shape(teacher_logits, student_logits))
        throw std::invalid_argument("soft_loss: logit shapes disagree");
    auto [rows, k] = detail::row_view(teacher_logits->shape);

    // Softened teacher probabilities and student log-probabilities, computed
    // with max-subtraction; both kept for the closed-form gradient.
    auto pt = std::make_shared<std::vector<double>>(rows * k);
    auto ps = std::make_shared<std::vector<double>>(rows * k);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* tz = teacher_logits->data.data() + r * k;
        const T* sz = student_logits->data.data() + r * k;
        double tmax = -1e300, smax = -1e300;
        for (int i = 0; i < k; ++i) {
            tmax = std::max(tmax, double(tz[i]) / temperature);
            smax = std::max(smax, double(sz[i]) / temperature);
        }
        double tsum = 0.0, ssum = 0.0;
        for (int i = 0; i < k; ++i) {
            tsum += std::exp(double(tz[i]) / temperature - tmax);
            ssum += std::exp(double(sz[i]) / temperature - smax);
        }
        double tlog = std::log(tsum), slog = std::log(ssum);
        for (int i = 0; i < k; ++i) {
            double lpt = double(tz[i]) / temperature - tmax - tlog;
            double lps = double(sz[i]) / temperature - smax - slog;
            double pv = std::exp(lpt);
            (*pt)[r * k + i] = pv;
            (*ps)[r * k + i] = std::exp(lps);
            total += pv * (lpt - lps);
        }
    }
    total = total * temperature * temperature / double(rows);
    auto out = scalar_tensor<T>(T(total));

    if (student_logits->requires_grad) {
        out->requires_grad = true;
        out->parents = {student_logits};
        Tensor<T>* o = out.get();
        std::size_t rows_c = rows;
        int k_c = k;
        out->backward_fn = [o, student_logits, pt, ps, temperature, rows_c, k_c]() {
            student_logits->ensure_grad();
            // d/ds = T²·(1/R)·(1/T)·(σ(s/T) − σ(t/T)) = (T/R)·(ps − pt)
            const double g = double(o->grad[0]) * temperature / double(rows_c);
            for (std::size_t i = 0; i < rows_c * k_c; ++i)
                student_logits->grad[i] += T(g * ((*ps)[i] - (*pt)[i]));
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> mse_loss(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (!same_shape(a, b))
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    const std::size_t n = a->numel();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = double(a->data[i]) - double(b->data[i]);
        total += d * d;
    }
    auto out = scalar_tensor<T>(T(total / double(n)));
    if (a->requires_grad || b->requires_grad) {
        out->requires_grad = true;
        out->parents = {a, b};
        Tensor<T>* o = out.get();
        out->backward_fn = [o, a, b, n]() {
            const double g = 2.0 * double(o->grad[0]) / double(n);
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    a->grad[i] += T(g * (double(a->data[i]) - double(b->data[i])));
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    b->grad[i] += T(g * (double(b->data[i]) - double(a->data[i])));
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> cross_entropy_loss(const TensorPtr<T>& logits, const std::vector<int>& labels) {
    if (logits->shape.size() != 2) throw std::invalid_argument("cross_entropy_loss: logits must be [B,K]");
    const int b = logits->shape[0], k = logits->shape[1];
    if (int(labels.size()) != b) throw std::invalid_argument("cross_entropy_loss: label count mismatch");
    for (int lb : labels)
        if (lb < 0 || lb >= k)
            throw std::out_of_range("cross_entropy_loss: label " + std::to_string(lb) + " outside [0," +
                                    std::to_string(k) + ")");

    auto probs = std::make_shared<std::vector<double>>(std::size_t(b) * k);
    double total = 0.0;
    for (int r = 0; r < b; ++r) {
        const T* z = logits->data.data() + std::size_t(r) * k;
        double mx = -1e300;
        for (int i = 0; i < k; ++i) mx = std::max(mx, double(z[i]));
        double sum = 0.0;
        for (int i = 0; i < k; ++i) sum += std::exp(double(z[i]) - mx);
        double lse = mx + std::log(sum);
        for (int i = 0; i < k; ++i) (*probs)[std::size_t(r) * k + i] = std::exp(double(z[i]) - lse);
        total += lse - double(z[labels[r]]);
    }
    auto out = scalar_tensor<T>(T(total / double(b)));
    if (logits->requires_grad) {
        out->requires_grad = true;
        out->parents = {logits};
        Tensor<T>* o = out.get();
        auto labels_c = labels;
        out->backward_fn = [o, logits, probs, labels_c, b, k]() {
            logits->ensure_grad();
            const double g = double(o->grad[0]) / double(b);
            for (int r = 0; r < b; ++r) {
                T* dz = logits->grad.data() + std::size_t(r) * k;
                for (int i = 0; i < k; ++i) {
                    double delta = (i == labels_c[r]) ? 1.0 : 0.0;
                    dz[i] += T(g * ((*probs)[std::size_t(r) * k + i] - delta));
                }
            }
        };
    }
    return out;
}

// ------------------------------------------------------- finite differences

// Compares the autodiff gradient of scalar-valued f at x against central
// differences. Returns the max elementwise relative error, with the
// denominator floored so near-zero gradients do not blow the ratio up.
template <typename T, typename F>
double finite_diff_check(F&& f, const TensorPtr<T>& x, T h) {
    if (h <= T(0)) throw std::invalid_argument("finite_diff_check: h must be > 0");

    auto tracked = make_tensor<T>(x->shape, x->data, /*requires_grad=*/true);
    auto loss = f(tracked);
    if (loss->numel() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
    backward(loss);

    double worst = 0.0;
    for (std::size_t i = 0; i < x->numel(); ++i) {
        auto probe = make_tensor<T>(x->shape, x->data);
        probe->data[i] = x->data[i] + h;
        double up = double(f(probe)->data[0]);
        probe->data[i] = x->data[i] - h;
        double down = double(f(probe)->data[0]);
        double fd = (up - down) / (2.0 * double(h));
        double ad = double(tracked->grad[i]);
        double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
        worst = std::max(worst, std::abs(fd - ad) / denom);
    }
    return worst;
}

} // namespace resdistill
