#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "resdistill/metrics.hpp"
#include "resdistill/model.hpp"
#include "resdistill/report.hpp"

using namespace resdistill;
namespace fs = std::filesystem;

namespace {

// Brute-force confusion oracle: per class, count TP/FP/FN with independent
// whole-array scans instead of a single confusion-matrix pass.
EvalResult oracle_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                          int num_classes) {
    EvalResult r;
    r.per_class.resize(num_classes);
    double ps = 0, rs = 0, fs = 0;
    for (int c = 0; c < num_classes; ++c) {
        long long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c && labels[i] == c) ++tp;
            if (preds[i] == c && labels[i] != c) ++fp;
            if (preds[i] != c && labels[i] == c) ++fn;
        }
        ClassMetrics& m = r.per_class[c];
        if (tp + fp == 0) m.precision_undefined = true;
        else m.precision = 100.0 * double(tp) / double(tp + fp);
        if (tp + fn == 0) m.recall_undefined = true;
        else m.recall = 100.0 * double(tp) / double(tp + fn);
        if (m.precision + m.recall == 0.0) m.f1_undefined = true;
        else m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        ps += m.precision;
        rs += m.recall;
        fs += m.f1;
    }
    long long hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
    r.accuracy = 100.0 * double(hits) / double(preds.size());
    r.macro_precision = ps / num_classes;
    r.macro_recall = rs / num_classes;
    r.macro_f1 = fs / num_classes;
    return r;
}

std::string file_text(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(bool(is));
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// A consistent report whose predictions are labels with the first `wrong`
// entries cycled to the next class.
MetricsReport sample_report(const std::string& model, const std::string& mag, double gflops,
                            int n, int wrong, std::uint64_t seed) {
    std::vector<int> labels(n), preds(n);
    for (int i = 0; i < n; ++i) labels[i] = i % 3;
    preds = labels;
    for (int i = 0; i < wrong && i < n; ++i) preds[i] = (labels[i] + 1) % 3;
    return make_report(model, mag, gflops, preds, labels, 3, /*iterations=*/200, 0.05, seed);
}

} // namespace

TEST_CASE("confusion metrics match hand-computed values") {
    // labels A,A,B with the middle prediction wrong
    EvalResult r = evaluate_metrics({0, 1, 1}, {0, 0, 1}, 2);
    CHECK(r.accuracy == doctest::Approx(200.0 / 3).epsilon(1e-12));
    CHECK(r.macro_precision == 75.0);
    CHECK(r.macro_recall == 75.0);
    CHECK(r.macro_f1 == doctest::Approx(200.0 / 3).epsilon(1e-12));
    CHECK(r.per_class[0].precision == 100.0);
    CHECK(r.per_class[0].recall == 50.0);
    CHECK(r.per_class[1].precision == 50.0);
    CHECK(r.per_class[1].recall == 100.0);
    CHECK(r.per_class[0].f1 == doctest::Approx(200.0 / 3).epsilon(1e-12));

    SUBCASE("perfect predictions score 100 everywhere") {
        EvalResult p = evaluate_metrics({0, 1, 2, 0}, {0, 1, 2, 0}, 3);
        CHECK(p.accuracy == 100.0);
        CHECK(p.macro_precision == 100.0);
        CHECK(p.macro_recall == 100.0);
        CHECK(p.macro_f1 == 100.0);
        for (const auto& m : p.per_class) {
            CHECK_FALSE(m.precision_undefined);
            CHECK_FALSE(m.recall_undefined);
            CHECK_FALSE(m.f1_undefined);
        }
    }

    SUBCASE("absent and never-predicted classes are flagged, contributing zero") {
        EvalResult z = evaluate_metrics({0, 1}, {0, 1}, 3);
        CHECK(z.per_class[2].precision_undefined);
        CHECK(z.per_class[2].recall_undefined);
        CHECK(z.per_class[2].f1_undefined);
        CHECK(z.per_class[2].precision == 0.0);
        CHECK(z.macro_precision == doctest::Approx(200.0 / 3).epsilon(1e-12));
    }

    SUBCASE("input validation") {
        CHECK_THROWS_AS(evaluate_metrics({0, 1}, {0}, 2), std::invalid_argument);
        CHECK_THROWS_AS(evaluate_metrics({}, {}, 2), std::invalid_argument);
        CHECK_THROWS_AS(evaluate_metrics({0, 2}, {0, 1}, 2), std::invalid_argument);
        CHECK_THROWS_AS(evaluate_metrics({0, 1}, {0, -1}, 2), std::invalid_argument);
        CHECK_THROWS_AS(evaluate_metrics({0}, {0}, 0), std::invalid_argument);
    }
}

TEST_CASE("confusion metrics agree with a brute-force oracle on 1000 random cases") {
    Rng rng(20240517);
    for (int t = 0; t < 1000; ++t) {
        const int k = 1 + int(rng.uniform_index(5));
        const int n = 1 + int(rng.uniform_index(50));
        std::vector<int> preds(n), labels(n);
        for (int i = 0; i < n; ++i) {
            preds[i] = int(rng.uniform_index(k));
            labels[i] = int(rng.uniform_index(k));
        }
        EvalResult got = evaluate_metrics(preds, labels, k);
        EvalResult want = oracle_metrics(preds, labels, k);
        CHECK(got.accuracy == want.accuracy);
        CHECK(got.macro_precision == want.macro_precision);
        CHECK(got.macro_recall == want.macro_recall);
        CHECK(got.macro_f1 == want.macro_f1);
        REQUIRE(got.per_class.size() == want.per_class.size());
        for (int c = 0; c < k; ++c) {
            CHECK(got.per_class[c].precision == want.per_class[c].precision);
            CHECK(got.per_class[c].recall == want.per_class[c].recall);
            CHECK(got.per_class[c].f1 == want.per_class[c].f1);
            CHECK(got.per_class[c].precision_undefined == want.per_class[c].precision_undefined);
            CHECK(got.per_class[c].recall_undefined == want.per_class[c].recall_undefined);
            CHECK(got.per_class[c].f1_undefined == want.per_class[c].f1_undefined);
        }
    }
}

TEST_CASE("macro metrics are invariant to class relabeling") {
    Rng rng(77);
    for (int t = 0; t < 50; ++t) {
        const int k = 2 + int(rng.uniform_index(4));
        const int n = 5 + int(rng.uniform_index(40));
        std::vector<int> preds(n), labels(n);
        for (int i = 0; i < n; ++i) {
            preds[i] = int(rng.uniform_index(k));
            labels[i] = int(rng.uniform_index(k));
        }
        std::vector<int> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm.begin(), perm.end());

        std::vector<int> p2(n), l2(n);
        for (int i = 0; i < n; ++i) {
            p2[i] = perm[preds[i]];
            l2[i] = perm[labels[i]];
        }
        EvalResult a = evaluate_metrics(preds, labels, k);
        EvalResult b = evaluate_metrics(p2, l2, k);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.macro_precision == doctest::Approx(b.macro_precision).epsilon(1e-12));
        CHECK(a.macro_recall == doctest::Approx(b.macro_recall).epsilon(1e-12));
        CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-12));
        for (int c = 0; c < k; ++c) {
            CHECK(a.per_class[c].precision == b.per_class[perm[c]].precision);
            CHECK(a.per_class[c].recall == b.per_class[perm[c]].recall);
            CHECK(a.per_class[c].f1 == b.per_class[perm[c]].f1);
        }
    }
}

TEST_CASE("bootstrap interval endpoints") {
    auto accuracy_fn = [](const std::vector<int>& p, const std::vector<int>& l) {
        return evaluate_metrics(p, l, 2).accuracy;
    };

    SUBCASE("perfect predictions give a degenerate interval") {
        Interval ci = bootstrap_ci({0, 1, 0, 1}, {0, 1, 0, 1}, accuracy_fn, 500, 0.05, 3);
        CHECK(ci.lower == 100.0);
        CHECK(ci.upper == 100.0);
    }

    SUBCASE("four samples match exhaustive enumeration of all 256 resamples") {
        const std::vector<int> preds{0, 0, 1, 1};
        const std::vector<int> labels{0, 0, 0, 0}; // exactly two correct
        // enumerate every equally likely index tuple and its resample accuracy
        std::vector<double> support;
        for (int code = 0; code < 256; ++code) {
            int correct = 0;
            for (int k = 0, v = code; k < 4; ++k, v >>= 2) correct += (v & 3) < 2;
            support.push_back(25.0 * correct);
        }
        std::sort(support.begin(), support.end());
        auto exact_q = [&](double q) {
            std::size_t pos = std::size_t(std::ceil(q * double(support.size())));
            if (pos > 0) --pos;
            return support[std::min(pos, support.size() - 1)];
        };
        const std::set<double> grid{0.0, 25.0, 50.0, 75.0, 100.0};
        for (double alpha : {0.05, 0.5}) {
            Interval ci = bootstrap_ci(preds, labels, accuracy_fn, 10000, alpha, 5);
            CHECK(ci.lower == exact_q(alpha / 2));
            CHECK(ci.upper == exact_q(1 - alpha / 2));
            CHECK(grid.count(ci.lower) == 1);
            CHECK(grid.count(ci.upper) == 1);
        }
    }

    SUBCASE("bounds are ordered and in range for random inputs") {
        Rng rng(42);
        for (int t = 0; t < 20; ++t) {
            const int n = 1 + int(rng.uniform_index(30));
            std::vector<int> p(n), l(n);
            for (int i = 0; i < n; ++i) {
                p[i] = int(rng.uniform_index(3));
                l[i] = int(rng.uniform_index(3));
            }
            auto fn = [](const std::vector<int>& a, const std::vector<int>& b) {
                return evaluate_metrics(a, b, 3).accuracy;
            };
            Interval ci = bootstrap_ci(p, l, fn, 300, 0.05, t);
            CHECK(ci.lower <= ci.upper);
            CHECK(ci.lower >= 0.0);
            CHECK(ci.upper <= 100.0);
        }
    }

    SUBCASE("doubling iterations moves endpoints by less than half a point") {
        Rng rng(99);
        const int n = 120;
        std::vector<int> preds(n), labels(n);
        for (int i = 0; i < n; ++i) {
            labels[i] = int(rng.uniform_index(3));
            preds[i] = rng.uniform() < 0.7 ? labels[i]
                                           : int((labels[i] + 1 + rng.uniform_index(2)) % 3);
        }
        auto fn = [](const std::vector<int>& p, const std::vector<int>& l) {
            return evaluate_metrics(p, l, 3).accuracy;
        };
        Interval a = bootstrap_ci(preds, labels, fn, 5000, 0.05, 7);
        Interval b = bootstrap_ci(preds, labels, fn, 10000, 0.05, 7);
        CHECK(std::abs(a.lower - b.lower) < 0.5);
        CHECK(std::abs(a.upper - b.upper) < 0.5);
    }

    SUBCASE("results are independent of the thread count") {
        std::vector<int> preds, labels;
        Rng rng(4);
        for (int i = 0; i < 60; ++i) {
            labels.push_back(int(rng.uniform_index(3)));
            preds.push_back(int(rng.uniform_index(3)));
        }
        auto fn = [](const std::vector<int>& p, const std::vector<int>& l) {
            return evaluate_metrics(p, l, 3).macro_f1;
        };
        Interval serial = bootstrap_ci(preds, labels, fn, 2000, 0.05, 11, 1);
        Interval threaded = bootstrap_ci(preds, labels, fn, 2000, 0.05, 11, 4);
        CHECK(serial.lower == threaded.lower);
        CHECK(serial.upper == threaded.upper);
    }

    SUBCASE("input validation") {
        CHECK_THROWS_AS(bootstrap_ci({0}, {0}, accuracy_fn, 0), std::invalid_argument);
        CHECK_THROWS_AS(bootstrap_ci({0}, {0}, accuracy_fn, 10, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(bootstrap_ci({0}, {0}, accuracy_fn, 10, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(bootstrap_ci({0, 1}, {0}, accuracy_fn), std::invalid_argument);
        CHECK_THROWS_AS(bootstrap_ci({}, {}, accuracy_fn), std::invalid_argument);
        CHECK_THROWS_AS(bootstrap_ci({0}, {0}, accuracy_fn, 10, 0.05, 0, 0), std::invalid_argument);
    }
}

TEST_CASE("metrics reports validate and serialize losslessly") {
    MetricsReport rep = sample_report("teacher", "1.0", 2.25, 30, 6, 17);
    CHECK_NOTHROW(rep.validate());
    CHECK(rep.metrics.accuracy == doctest::Approx(80.0));
    CHECK(rep.n_test == 30);

    nlohmann::json j = report_to_json(rep);
    MetricsReport back = report_from_json(j);
    CHECK(back.model == rep.model);
    CHECK(back.magnification == rep.magnification);
    CHECK(back.gflops == rep.gflops);
    CHECK(back.n_test == rep.n_test);
    CHECK(back.metrics.accuracy == rep.metrics.accuracy);
    CHECK(back.metrics.macro_precision == rep.metrics.macro_precision);
    CHECK(back.metrics.macro_recall == rep.metrics.macro_recall);
    CHECK(back.metrics.macro_f1 == rep.metrics.macro_f1);
    CHECK(back.accuracy_ci.lower == rep.accuracy_ci.lower);
    CHECK(back.accuracy_ci.upper == rep.accuracy_ci.upper);
    CHECK(back.f1_ci.lower == rep.f1_ci.lower);
    CHECK(back.f1_ci.upper == rep.f1_ci.upper);
    REQUIRE(back.metrics.per_class.size() == rep.metrics.per_class.size());
    for (std::size_t c = 0; c < rep.metrics.per_class.size(); ++c) {
        CHECK(back.metrics.per_class[c].precision == rep.metrics.per_class[c].precision);
        CHECK(back.metrics.per_class[c].recall == rep.metrics.per_class[c].recall);
        CHECK(back.metrics.per_class[c].f1 == rep.metrics.per_class[c].f1);
        CHECK(back.metrics.per_class[c].precision_undefined ==
              rep.metrics.per_class[c].precision_undefined);
    }

    // a forward-pass cost stored in the report survives serialization exactly
    ModelConfig mcfg;
    mcfg.stage_widths = {8, 16};
    mcfg.num_groups = 4;
    Model<float> model = build_model<float>(mcfg, 1);
    const double gf = double(model.count_flops(64, 64)) / 1e9;
    MetricsReport prov = sample_report("probe", "0.25", gf, 12, 2, 3);
    CHECK(report_from_json(report_to_json(prov)).gflops == gf);

    MetricsReport bad = rep;
    bad.accuracy_ci = {50.0, 40.0};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = rep;
    bad.metrics.macro_f1 += 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("tradeoff table sorts by compute and formats two decimals") {
    std::vector<MetricsReport> reports = {
        sample_report("student", "0.5", 2.0, 24, 4, 1),
        sample_report("student", "0.125", 0.05, 24, 9, 2),
        sample_report("teacher", "1.0", 8.0, 24, 1, 3),
    };
    std::string csv = tradeoff_csv(reports);
    std::vector<std::string> lines;
    std::istringstream is(csv);
    for (std::string line; std::getline(is, line);) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == kTradeoffHeader);
    CHECK(lines[1].rfind("student,0.125,0.05,62.50,", 0) == 0);
    CHECK(lines[2].rfind("student,0.5,2,83.33,", 0) == 0);
    CHECK(lines[3].rfind("teacher,1.0,8,95.83,", 0) == 0);

    CHECK(tradeoff_csv({reports[0]}) == std::string(kTradeoffHeader) + "\n" + lines[2] + "\n");
    CHECK_THROWS_AS(tradeoff_csv({}), std::invalid_argument);
}

TEST_CASE("tradeoff chart is deterministic and structurally complete") {
    std::vector<MetricsReport> reports = {
        sample_report("student", "0.125", 0.04, 24, 8, 1),
        sample_report("student", "0.25", 0.15, 24, 6, 2),
        sample_report("student", "0.5", 0.6, 24, 4, 3),
        sample_report("teacher", "1.0", 2.3, 24, 1, 4),
    };
    std::string svg = tradeoff_svg(reports);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("GFLOPS per forward pass (log scale)") != std::string::npos);
    CHECK(svg.find("test accuracy (%)") != std::string::npos);
    CHECK(svg.find(">student<") != std::string::npos);
    CHECK(svg.find(">teacher<") != std::string::npos);

    auto count_of = [&](const std::string& needle) {
        std::size_t n = 0;
        for (std::size_t pos = svg.find(needle); pos != std::string::npos;
             pos = svg.find(needle, pos + 1))
            ++n;
        return n;
    };
    CHECK(count_of("<polyline") == 2); // one line per model family
    CHECK(count_of("<circle") == 4);   // one dot per report

    CHECK(tradeoff_svg(reports) == svg);

    std::vector<MetricsReport> flat = {sample_report("m", "1.0", 0.0, 8, 2, 9)};
    CHECK_THROWS_AS(tradeoff_svg(flat), std::invalid_argument);
}

TEST_CASE("report bundles are complete, idempotent, and checked for artifacts") {
    fs::path root = fs::temp_directory_path() / "resdistill_report_tree";
    fs::remove_all(root);
    fs::create_directories(root / "runs" / "teacher");
    fs::create_directories(root / "runs" / "student");
    fs::create_directories(root / "runs" / "grid");

    auto write_eval = [&](const fs::path& dir, const MetricsReport& rep) {
        std::ofstream(dir / "checkpoint.bin") << "weights";
        nlohmann::json j = {{"schema", "resdistill-eval-v1"},
                            {"checkpoint", (dir / "checkpoint.bin").string()},
                            {"report", report_to_json(rep)}};
        std::ofstream(dir / "eval.json") << j.dump(2) << "\n";
    };
    write_eval(root / "runs" / "teacher", sample_report("teacher", "1.0", 2.3, 24, 2, 1));
    write_eval(root / "runs" / "student", sample_report("student", "0.125", 0.04, 24, 7, 2));
    std::ofstream(root / "runs" / "grid" / "ablation.csv")
        << "mode,magnification,seed,dev_accuracy,fingerprint\n"
           "NONE,0.125,0,55.00,aaaa\nMP_AND_INT,0.125,0,61.67,bbbb\n";

    ReportBundle bundle = emit_report(root.string(), (root / "report").string());
    for (const std::string* p : {&bundle.report_json, &bundle.tradeoff_csv_path,
                                 &bundle.tradeoff_svg_path, &bundle.ablation_csv})
        CHECK(fs::exists(*p));

    nlohmann::json rj;
    std::ifstream(bundle.report_json) >> rj;
    CHECK(rj.at("schema") == "resdistill-report-v1");
    REQUIRE(rj.at("reports").size() == 2);
    CHECK(rj.at("reports")[0].at("model") == "student"); // ascending gflops
    CHECK(rj.at("reports")[1].at("model") == "teacher");

    std::string ablation = file_text(bundle.ablation_csv);
    CHECK(ablation == "mode,magnification,seed,dev_accuracy,fingerprint\n"
                      "NONE,0.125,0,55.00,aaaa\nMP_AND_INT,0.125,0,61.67,bbbb\n");

    // second emission, with the bundle already inside the tree, is byte-identical
    std::map<std::string, std::string> before;
    for (const std::string* p : {&bundle.report_json, &bundle.tradeoff_csv_path,
                                 &bundle.tradeoff_svg_path, &bundle.ablation_csv})
        before[*p] = file_text(*p);
    emit_report(root.string(), (root / "report").string());
    for (const auto& [path, content] : before) CHECK(file_text(path) == content);

    // a vanished checkpoint is reported by path
    fs::remove(root / "runs" / "student" / "checkpoint.bin");
    bool threw = false;
    try {
        emit_report(root.string(), (root / "report").string());
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find((root / "runs" / "student" / "checkpoint.bin").string()) !=
              std::string::npos);
    }
    CHECK(threw);

    fs::path empty = root / "empty";
    fs::create_directories(empty);
    CHECK_THROWS_AS(emit_report(empty.string(), (root / "r2").string()), std::runtime_error);
    fs::remove_all(root);
}
