#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "resdistill/common.hpp"

namespace resdistill {

// One-vs-rest scores for a single class, as percentages. A zero-denominator
// ratio is reported as 0 with its flag set so macro averages stay defined.
struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

struct EvalResult {
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0; // plain sample accuracy, percent
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

// Confusion-matrix metrics: per class, precision = TP/(TP+FP) and
// recall = TP/(TP+FN) in one-vs-rest fashion; F1 is their harmonic mean;
// macro values are unweighted means over classes.
inline EvalResult evaluate_metrics(const std::vector<int>& predictions,
                                   const std::vector<int>& labels, int num_classes) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("evaluate_metrics: predictions and labels differ in length");
    if (predictions.empty()) throw std::invalid_argument("evaluate_metrics: empty input");
    if (num_classes < 1) throw std::invalid_argument("evaluate_metrics: num_classes must be >= 1");

    std::vector<long long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    long long correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], l = labels[i];
        if (p < 0 || p >= num_classes)
            throw std::invalid_argument("evaluate_metrics: prediction out of range");
        if (l < 0 || l >= num_classes)
            throw std::invalid_argument("evaluate_metrics: label out of range");
        if (p == l) {
            ++tp[p];
            ++correct;
        } else {
            ++fp[p];
            ++fn[l];
        }
    }

    EvalResult r;
    r.per_class.resize(num_classes);
    double psum = 0.0, rsum = 0.0, fsum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        ClassMetrics& m = r.per_class[c];
        const long long pden = tp[c] + fp[c];
        const long long rden = tp[c] + fn[c];
        if (pden == 0) m.precision_undefined = true;
        else m.precision = 100.0 * double(tp[c]) / double(pden);
        if (rden == 0) m.recall_undefined = true;
        else m.recall = 100.0 * double(tp[c]) / double(rden);
        if (m.precision + m.recall == 0.0) m.f1_undefined = true;
        else m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        psum += m.precision;
        rsum += m.recall;
        fsum += m.f1;
    }
    r.accuracy = 100.0 * double(correct) / double(predictions.size());
    r.macro_precision = psum / num_classes;
    r.macro_recall = rsum / num_classes;
    r.macro_f1 = fsum / num_classes;
    return r;
}

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

using MetricFn = std::function<double(const std::vector<int>&, const std::vector<int>&)>;

// Percentile bootstrap over resamples of (prediction, label) pairs. Iteration
// `it` draws from its own stream derived as (seed, "bootstrap", it), so the
// result is independent of `jobs`; the metric function must be thread-safe.
// Endpoints are the smallest sampled values whose empirical CDF reaches
// alpha/2 and 1 - alpha/2.
inline Interval bootstrap_ci(const std::vector<int>& predictions, const std::vector<int>& labels,
                             const MetricFn& metric, int iterations = 10000, double alpha = 0.05,
                             std::uint64_t seed = 0, int jobs = 1) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("bootstrap_ci: predictions and labels differ in length");
    if (predictions.empty()) throw std::invalid_argument("bootstrap_ci: empty input");
    if (iterations < 1) throw std::invalid_argument("bootstrap_ci: iterations must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("bootstrap_ci: alpha must lie in (0, 1)");
    if (jobs < 1) throw std::invalid_argument("bootstrap_ci: jobs must be >= 1");

    const std::size_t n = predictions.size();
    std::vector<double> values(iterations);
    auto run_range = [&](int lo, int hi) {
        std::vector<int> p(n), l(n);
        for (int it = lo; it < hi; ++it) {
            Rng rng(derive_seed(seed, "bootstrap", std::uint64_t(it)));
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = rng.uniform_index(n);
                p[i] = predictions[k];
                l[i] = labels[k];
            }
            values[it] = metric(p, l);
        }
    };

    const int workers = std::min<int>(jobs, iterations);
    if (workers <= 1) {
        run_range(0, iterations);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            const int lo = int(std::int64_t(iterations) * w / workers);
            const int hi = int(std::int64_t(iterations) * (w + 1) / workers);
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    std::sort(values.begin(), values.end());
    auto at_quantile = [&](double q) {
        std::size_t idx = std::size_t(std::ceil(q * iterations));
        if (idx > 0) --idx;
        if (idx >= values.size()) idx = values.size() - 1;
        return values[idx];
    };
    return {at_quantile(alpha / 2.0), at_quantile(1.0 - alpha / 2.0)};
}

// Everything the tradeoff table needs to know about one evaluated model:
// where it sits on the compute axis and how well it classifies, with
// bootstrap intervals for each headline metric.
struct MetricsReport {
    std::string model;         // model family tag, groups rows in the chart
    std::string magnification; // magnification tag, e.g. "0.125"
    double gflops = 0.0;       // forward-pass cost at this input size
    int n_test = 0;
    EvalResult metrics;
    Interval accuracy_ci, precision_ci, recall_ci, f1_ci;

    void validate() const {
        if (model.empty()) throw std::invalid_argument("MetricsReport: empty model tag");
        if (magnification.empty())
            throw std::invalid_argument("MetricsReport: empty magnification tag");
        if (!(gflops >= 0.0)) throw std::invalid_argument("MetricsReport: negative gflops");
        if (n_test < 1) throw std::invalid_argument("MetricsReport: n_test must be >= 1");
        if (metrics.per_class.empty())
            throw std::invalid_argument("MetricsReport: no per-class metrics");
        auto in_range = [](double v) { return v >= 0.0 && v <= 100.0; };
        for (const auto& m : metrics.per_class)
            if (!in_range(m.precision) || !in_range(m.recall) || !in_range(m.f1))
                throw std::invalid_argument("MetricsReport: per-class value outside [0, 100]");
        double ps = 0, rs = 0, fs = 0;
        for (const auto& m : metrics.per_class) {
            ps += m.precision;
            rs += m.recall;
            fs += m.f1;
        }
        const double k = double(metrics.per_class.size());
        if (std::abs(metrics.macro_precision - ps / k) > 1e-9 ||
            std::abs(metrics.macro_recall - rs / k) > 1e-9 ||
            std::abs(metrics.macro_f1 - fs / k) > 1e-9)
            throw std::invalid_argument("MetricsReport: macro values are not per-class means");
        for (const Interval* ci : {&accuracy_ci, &precision_ci, &recall_ci, &f1_ci}) {
            if (!(ci->lower <= ci->upper))
                throw std::invalid_argument("MetricsReport: interval bounds out of order");
            if (!in_range(ci->lower) || !in_range(ci->upper))
                throw std::invalid_argument("MetricsReport: interval outside [0, 100]");
        }
        if (!in_range(metrics.accuracy))
            throw std::invalid_argument("MetricsReport: accuracy outside [0, 100]");
    }
};

// Point metrics plus paired bootstrap intervals (every metric sees the same
// resample sequence because all four calls share one seed).
inline MetricsReport make_report(const std::string& model, const std::string& magnification,
                                 double gflops, const std::vector<int>& predictions,
                                 const std::vector<int>& labels, int num_classes,
                                 int iterations = 10000, double alpha = 0.05,
                                 std::uint64_t seed = 0, int jobs = 1) {
    MetricsReport rep;
    rep.model = model;
    rep.magnification = magnification;
    rep.gflops = gflops;
    rep.n_test = int(predictions.size());
    rep.metrics = evaluate_metrics(predictions, labels, num_classes);
    auto ci_of = [&](auto&& field) {
        MetricFn fn = [&field, num_classes](const std::vector<int>& p, const std::vector<int>& l) {
            return field(evaluate_metrics(p, l, num_classes));
        };
        return bootstrap_ci(predictions, labels, fn, iterations, alpha, seed, jobs);
    };
    rep.accuracy_ci = ci_of([](const EvalResult& r) { return r.accuracy; });
    rep.precision_ci = ci_of([](const EvalResult& r) { return r.macro_precision; });
    rep.recall_ci = ci_of([](const EvalResult& r) { return r.macro_recall; });
    rep.f1_ci = ci_of([](const EvalResult& r) { return r.macro_f1; });
    rep.validate();
    return rep;
}

} // namespace resdistill
