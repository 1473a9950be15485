#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "resdistill/metrics.hpp"

namespace resdistill {

namespace detail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string fmt_gflops(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

// Rows ordered by compute cost; ties broken by name so output is stable.
inline std::vector<MetricsReport> sorted_reports(std::vector<MetricsReport> reports) {
    std::sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
        if (a.gflops != b.gflops) return a.gflops < b.gflops;
        if (a.model != b.model) return a.model < b.model;
        return a.magnification < b.magnification;
    });
    return reports;
}

} // namespace detail

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < r.metrics.per_class.size(); ++c) {
        const ClassMetrics& m = r.metrics.per_class[c];
        nlohmann::json flags = nlohmann::json::array();
        if (m.precision_undefined) flags.push_back("precision");
        if (m.recall_undefined) flags.push_back("recall");
        if (m.f1_undefined) flags.push_back("f1");
        per_class.push_back({{"class", c},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"undefined", flags}});
    }
    return {{"model", r.model},
            {"magnification", r.magnification},
            {"gflops", r.gflops},
            {"n_test", r.n_test},
            {"accuracy", r.metrics.accuracy},
            {"accuracy_ci", {r.accuracy_ci.lower, r.accuracy_ci.upper}},
            {"macro_precision", r.metrics.macro_precision},
            {"precision_ci", {r.precision_ci.lower, r.precision_ci.upper}},
            {"macro_recall", r.metrics.macro_recall},
            {"recall_ci", {r.recall_ci.lower, r.recall_ci.upper}},
            {"macro_f1", r.metrics.macro_f1},
            {"f1_ci", {r.f1_ci.lower, r.f1_ci.upper}},
            {"per_class", per_class}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.magnification = j.at("magnification").get<std::string>();
    r.gflops = j.at("gflops").get<double>();
    r.n_test = j.at("n_test").get<int>();
    r.metrics.accuracy = j.at("accuracy").get<double>();
    r.metrics.macro_precision = j.at("macro_precision").get<double>();
    r.metrics.macro_recall = j.at("macro_recall").get<double>();
    r.metrics.macro_f1 = j.at("macro_f1").get<double>();
    auto interval = [&](const char* key) {
        const auto& v = j.at(key);
        return Interval{v.at(0).get<double>(), v.at(1).get<double>()};
    };
    r.accuracy_ci = interval("accuracy_ci");
    r.precision_ci = interval("precision_ci");
    r.recall_ci = interval("recall_ci");
    r.f1_ci = interval("f1_ci");
    for (const auto& pc : j.at("per_class")) {
        ClassMetrics m;
        m.precision = pc.at("precision").get<double>();
        m.recall = pc.at("recall").get<double>();
        m.f1 = pc.at("f1").get<double>();
        for (const auto& flag : pc.at("undefined")) {
            const std::string f = flag.get<std::string>();
            if (f == "precision") m.precision_undefined = true;
            else if (f == "recall") m.recall_undefined = true;
            else if (f == "f1") m.f1_undefined = true;
        }
        r.metrics.per_class.push_back(m);
    }
    r.validate();
    return r;
}

inline const char* kTradeoffHeader =
    "model,magnification,gflops,accuracy,acc_ci_lo,acc_ci_hi,f1,f1_ci_lo,f1_ci_hi,"
    "precision,precision_ci_lo,precision_ci_hi,recall,recall_ci_lo,recall_ci_hi";

// CSV of the accuracy-vs-compute table, rows ascending in GFLOPS.
inline std::string tradeoff_csv(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("tradeoff_csv: no reports");
    std::ostringstream os;
    os << kTradeoffHeader << "\n";
    for (const MetricsReport& r : detail::sorted_reports(reports)) {
        r.validate();
        os << r.model << ',' << r.magnification << ',' << detail::fmt_gflops(r.gflops) << ','
           << detail::fmt2(r.metrics.accuracy) << ',' << detail::fmt2(r.accuracy_ci.lower) << ','
           << detail::fmt2(r.accuracy_ci.upper) << ',' << detail::fmt2(r.metrics.macro_f1) << ','
           << detail::fmt2(r.f1_ci.lower) << ',' << detail::fmt2(r.f1_ci.upper) << ','
           << detail::fmt2(r.metrics.macro_precision) << ',' << detail::fmt2(r.precision_ci.lower)
           << ',' << detail::fmt2(r.precision_ci.upper) << ','
           << detail::fmt2(r.metrics.macro_recall) << ',' << detail::fmt2(r.recall_ci.lower) << ','
           << detail::fmt2(r.recall_ci.upper) << "\n";
    }
    return os.str();
}

// Accuracy against forward-pass GFLOPS on a log x-axis: one polyline per
// model family, a circle per report, and whiskers for the accuracy interval.
inline std::string tradeoff_svg(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("tradeoff_svg: no reports");
    const auto rows = detail::sorted_reports(reports);
    for (const auto& r : rows) {
        r.validate();
        if (!(r.gflops > 0.0))
            throw std::invalid_argument("tradeoff_svg: gflops must be positive for the log axis");
    }

    const double width = 720, height = 480;
    const double ml = 70, mr = 170, mt = 40, mb = 55;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    double lmin = std::log10(rows.front().gflops), lmax = lmin;
    double amin = 100.0, amax = 0.0;
    for (const auto& r : rows) {
        lmin = std::min(lmin, std::log10(r.gflops));
        lmax = std::max(lmax, std::log10(r.gflops));
        amin = std::min({amin, r.accuracy_ci.lower, r.metrics.accuracy});
        amax = std::max({amax, r.accuracy_ci.upper, r.metrics.accuracy});
    }
    if (lmax - lmin < 1e-9) {
        lmin -= 0.5;
        lmax += 0.5;
    }
    const double lpad = 0.05 * (lmax - lmin);
    lmin -= lpad;
    lmax += lpad;
    double ylo = std::max(0.0, std::floor((amin - 5.0) / 10.0) * 10.0);
    double yhi = std::min(100.0, std::ceil((amax + 5.0) / 10.0) * 10.0);
    if (yhi - ylo < 1e-9) {
        ylo = std::max(0.0, ylo - 10.0);
        yhi = std::min(100.0, yhi + 10.0);
    }

    auto x_of = [&](double gflops) {
        return ml + (std::log10(gflops) - lmin) / (lmax - lmin) * plot_w;
    };
    auto y_of = [&](double acc) { return mt + (yhi - acc) / (yhi - ylo) * plot_h; };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };

    std::map<std::string, std::vector<const MetricsReport*>> families;
    for (const auto& r : rows) families[r.model].push_back(&r);
    const char* palette[] = {"#1f6fb4", "#d1502f", "#3a8f4d", "#8a5bbf", "#b3822d", "#4d4d4d"};
    const int palette_n = 6;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 12
       << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">"
          "GFLOPS per forward pass (log scale)</text>\n";
    os << "<text x=\"18\" y=\"" << mt + plot_h / 2
       << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << mt + plot_h / 2 << ")\">test accuracy (%)</text>\n";

    // gridlines: decades on x, 10-point steps on y
    for (int e = int(std::ceil(lmin)); e <= int(std::floor(lmax)); ++e) {
        const double x = ml + (e - lmin) / (lmax - lmin) * plot_w;
        os << "<line x1=\"" << num(x) << "\" y1=\"" << mt << "\" x2=\"" << num(x) << "\" y2=\""
           << mt + plot_h << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << num(x) << "\" y=\"" << mt + plot_h + 18
           << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">1e" << e
           << "</text>\n";
    }
    for (double a = ylo; a <= yhi + 1e-9; a += 10.0) {
        const double y = y_of(a);
        os << "<line x1=\"" << ml << "\" y1=\"" << num(y) << "\" x2=\"" << ml + plot_w
           << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << num(y + 4)
           << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << int(a)
           << "</text>\n";
    }
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << plot_w << "\" height=\""
       << plot_h << "\" fill=\"none\" stroke=\"#333333\"/>\n";

    int family_idx = 0;
    for (const auto& [name, members] : families) {
        const char* color = palette[family_idx % palette_n];
        std::ostringstream pts;
        for (const MetricsReport* r : members)
            pts << num(x_of(r->gflops)) << ',' << num(y_of(r->metrics.accuracy)) << ' ';
        os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        for (const MetricsReport* r : members) {
            const double x = x_of(r->gflops);
            os << "<line x1=\"" << num(x) << "\" y1=\"" << num(y_of(r->accuracy_ci.lower))
               << "\" x2=\"" << num(x) << "\" y2=\"" << num(y_of(r->accuracy_ci.upper))
               << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
            os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y_of(r->metrics.accuracy))
               << "\" r=\"4\" fill=\"" << color << "\"/>\n";
        }
        const double ly = mt + 16 + 20.0 * family_idx;
        os << "<line x1=\"" << width - mr + 12 << "\" y1=\"" << num(ly - 4) << "\" x2=\""
           << width - mr + 36 << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << width - mr + 42 << "\" y=\"" << num(ly)
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::svg_escape(name)
           << "</text>\n";
        ++family_idx;
    }
    os << "</svg>\n";
    return os.str();
}

struct ReportBundle {
    std::string report_json;
    std::string tradeoff_csv_path;
    std::string tradeoff_svg_path;
    std::string ablation_csv;
};

// Collects every eval.json under `runs_root` (each written by an evaluation
// run, pointing at the checkpoint it scored) plus any ablation.csv files, and
// writes the four-file bundle into `out_dir`. Output depends only on the
// inputs, so re-running emits byte-identical files; anything already inside
// `out_dir` is ignored by the scan.
inline ReportBundle emit_report(const std::string& runs_root, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(runs_root))
        throw std::runtime_error("emit_report: no such directory: " + runs_root);

    fs::create_directories(out_dir);
    const fs::path out_canon = fs::weakly_canonical(out_dir);
    auto inside_out_dir = [&](const fs::path& p) {
        const fs::path canon = fs::weakly_canonical(p);
        auto it = std::mismatch(out_canon.begin(), out_canon.end(), canon.begin(), canon.end());
        return it.first == out_canon.end();
    };

    std::vector<fs::path> eval_files, ablation_files;
    for (const auto& entry : fs::recursive_directory_iterator(runs_root)) {
        if (!entry.is_regular_file() || inside_out_dir(entry.path())) continue;
        if (entry.path().filename() == "eval.json") eval_files.push_back(entry.path());
        else if (entry.path().filename() == "ablation.csv") ablation_files.push_back(entry.path());
    }
    std::sort(eval_files.begin(), eval_files.end());
    std::sort(ablation_files.begin(), ablation_files.end());
    if (eval_files.empty())
        throw std::runtime_error("emit_report: no eval.json artifacts under " + runs_root);

    std::vector<MetricsReport> reports;
    std::vector<std::string> missing;
    for (const fs::path& p : eval_files) {
        std::ifstream is(p);
        if (!is) throw std::runtime_error("emit_report: cannot open " + p.string());
        nlohmann::json j;
        is >> j;
        reports.push_back(report_from_json(j.at("report")));
        if (j.contains("checkpoint")) {
            const std::string ckpt = j.at("checkpoint").get<std::string>();
            if (!fs::exists(ckpt)) missing.push_back(ckpt);
        }
    }
    if (!missing.empty()) {
        std::string msg = "emit_report: missing run artifacts:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw std::runtime_error(msg);
    }

    const auto rows = detail::sorted_reports(reports);
    nlohmann::json bundle = {{"schema", "resdistill-report-v1"},
                             {"reports", nlohmann::json::array()}};
    for (const auto& r : rows) bundle["reports"].push_back(report_to_json(r));

    // merge ablation grids: one header, data rows in sorted-path order
    const std::string ablation_header = "mode,magnification,seed,dev_accuracy,fingerprint";
    std::string ablation = ablation_header + "\n";
    for (const fs::path& p : ablation_files) {
        std::ifstream is(p);
        if (!is) throw std::runtime_error("emit_report: cannot open " + p.string());
        std::string line;
        if (!std::getline(is, line) || line != ablation_header)
            throw std::runtime_error("emit_report: unexpected ablation header in " + p.string());
        while (std::getline(is, line))
            if (!line.empty()) ablation += line + "\n";
    }

    ReportBundle out;
    out.report_json = (fs::path(out_dir) / "report.json").string();
    out.tradeoff_csv_path = (fs::path(out_dir) / "tradeoff.csv").string();
    out.tradeoff_svg_path = (fs::path(out_dir) / "tradeoff.svg").string();
    out.ablation_csv = (fs::path(out_dir) / "ablation.csv").string();
    auto write_file = [](const std::string& path, const std::string& content) {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("emit_report: cannot write " + path);
        os << content;
    };
    write_file(out.report_json, bundle.dump(2) + "\n");
    write_file(out.tradeoff_csv_path, tradeoff_csv(rows));
    write_file(out.tradeoff_svg_path, tradeoff_svg(rows));
    write_file(out.ablation_csv, ablation);
    return out;
}

} // namespace resdistill
