#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(bool(is));
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct CliResult {
    int code = -1;
    std::string out, err;
};

fs::path scratch_dir() {
    fs::path p = fs::temp_directory_path() / "resdistill_cli_test";
    return p;
}

CliResult run_cli(const std::string& args) {
    const char* bin = std::getenv("RESDISTILL_BIN");
    REQUIRE_MESSAGE(bin, "RESDISTILL_BIN must point at the built binary");
    fs::path dir = scratch_dir();
    fs::create_directories(dir);
    const fs::path so = dir / "stdout.txt", se = dir / "stderr.txt";
    const std::string cmd =
        std::string(bin) + " " + args + " > " + so.string() + " 2> " + se.string();
    const int rc = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(so);
    r.err = slurp(se);
    return r;
}

// Reads every regular file under `root` into a path-keyed map for tree diffs.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

} // namespace

TEST_CASE("cli reports compute costs and exit codes") {
    CliResult ok = run_cli("flops --mag 0.125 --base-size 256");
    CHECK(ok.code == 0);
    CHECK(ok.out.find("32x32") != std::string::npos);
    const std::size_t pos = ok.out.find("reduction vs magnification 1.0: ");
    REQUIRE(pos != std::string::npos);
    const double factor = std::stod(ok.out.substr(pos + 32));
    CHECK(factor >= 60.0);
    CHECK(factor <= 68.0);

    SUBCASE("usage problems exit 1 with help on stderr") {
        CliResult bad = run_cli("flops --definitely-not-a-flag");
        CHECK(bad.code == 1);
        CHECK(bad.err.find("Usage") != std::string::npos);

        CliResult none = run_cli("");
        CHECK(none.code == 1);

        CliResult sub = run_cli("not-a-subcommand");
        CHECK(sub.code == 1);
        CHECK(sub.err.find("Usage") != std::string::npos);
    }

    SUBCASE("help exits 0") { CHECK(run_cli("--help").code == 0); }

    SUBCASE("runtime failures exit 2") {
        CliResult r = run_cli("train-teacher --data /nonexistent-dataset --output-dir " +
                              (scratch_dir() / "x").string());
        CHECK(r.code == 2);
        CHECK(r.err.find("error:") != std::string::npos);
    }
}

TEST_CASE("cli flags beat config values beat defaults") {
    fs::path dir = scratch_dir() / "precedence";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "cfg.json") << R"({"base-size": 128})";

    CliResult defaults = run_cli("flops --mag 1.0");
    CHECK(defaults.out.find("input 256x256") != std::string::npos);

    CliResult from_config = run_cli("flops --mag 1.0 --config " + (dir / "cfg.json").string());
    CHECK(from_config.out.find("input 128x128") != std::string::npos);

    CliResult from_flag =
        run_cli("flops --mag 1.0 --base-size 64 --config " + (dir / "cfg.json").string());
    CHECK(from_flag.out.find("input 64x64") != std::string::npos);
}

TEST_CASE("cli dataset generation is deterministic") {
    fs::path dir = scratch_dir() / "gen";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string common = " --patients 8 --base-size 64 --levels 1.0,0.5 --seed 7 "
                               "--aux1-frac 0.13 --aux2-frac 0.25 --dev-frac 0.12 --quiet";
    CHECK(run_cli("gen-data --output-dir " + (dir / "a").string() + common).code == 0);
    CHECK(run_cli("gen-data --output-dir " + (dir / "b").string() + common).code == 0);
    CHECK(tree_bytes(dir / "a") == tree_bytes(dir / "b"));
    CHECK(fs::exists(dir / "a" / "manifest.csv"));
    CHECK(fs::exists(dir / "a" / "stats.json"));
    CHECK(fs::exists(dir / "a" / "run_config.json"));
    fs::remove_all(dir);
}

TEST_CASE("cli pipeline runs end to end") {
    fs::path dir = scratch_dir() / "pipeline";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string data = (dir / "data").string();
    const std::string arch = " --widths 8,8 --groups 4 ";

    REQUIRE(run_cli("gen-data --output-dir " + data +
                    " --patients 10 --base-size 64 --levels 1.0,0.5 --seed 11 "
                    "--aux1-frac 0.2 --aux2-frac 0.2 --dev-frac 0.1 --quiet")
                .code == 0);

    REQUIRE(run_cli("train-teacher --data " + data + " --output-dir " + (dir / "teacher").string() +
                    arch + "--mag 1.0 --epochs 2 --accumulation 4 --seed 1 --quiet")
                .code == 0);
    CHECK(fs::exists(dir / "teacher" / "checkpoint.bin"));
    CHECK(fs::exists(dir / "teacher" / "run_config.json"));
    CHECK(fs::exists(dir / "teacher" / "trace.csv"));

    REQUIRE(run_cli("distill --data " + data + " --output-dir " + (dir / "kd").string() + arch +
                    "--teacher " + (dir / "teacher" / "checkpoint.bin").string() +
                    " --student-mag 0.5 --epochs 2 --accumulation 4 --seed 2 "
                    "--distill-split aux_v1 --dev-split development --quiet")
                .code == 0);
    CHECK(fs::exists(dir / "kd" / "checkpoint.bin"));

    REQUIRE(run_cli("finetune --data " + data + " --output-dir " + (dir / "ft").string() + arch +
                    "--checkpoint " + (dir / "kd" / "checkpoint.bin").string() +
                    " --mag 0.5 --epochs 2 --patience 2 --seed 3 --quiet")
                .code == 0);
    CHECK(fs::exists(dir / "ft" / "checkpoint.bin"));

    CliResult skip = run_cli("finetune --data " + data + " --output-dir " +
                             (dir / "ft2").string() + arch + "--checkpoint " +
                             (dir / "kd" / "checkpoint.bin").string() +
                             " --mag 0.5 --distill-split train");
    CHECK(skip.code == 0);
    CHECK(skip.out.find("skipping") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "ft2" / "checkpoint.bin"));

    REQUIRE(run_cli("eval --data " + data + " --checkpoint " +
                    (dir / "ft" / "checkpoint.bin").string() +
                    " --mag 0.5 --split test --model-tag student --iterations 200 --quiet")
                .code == 0);
    json ev;
    std::ifstream(dir / "ft" / "eval.json") >> ev;
    CHECK(ev.at("schema") == "resdistill-eval-v1");
    CHECK(ev.at("report").at("model") == "student");
    CHECK(ev.at("report").at("magnification") == "0.5");

    REQUIRE(run_cli("ablate --data " + data + " --output-dir " + (dir / "grid").string() + arch +
                    "--teacher " + (dir / "teacher" / "checkpoint.bin").string() +
                    " --mags 0.5 --modes NONE,MP --seeds 0 --epochs 1 --accumulation 4 "
                    "--distill-split aux_v1 --dev-split development --jobs 2 --quiet")
                .code == 0);
    CHECK(fs::exists(dir / "grid" / "ablation.csv"));

    REQUIRE(run_cli("report --runs " + dir.string() + " --output-dir " +
                    (dir / "report").string() + " --quiet")
                .code == 0);
    CHECK(fs::exists(dir / "report" / "report.json"));
    CHECK(fs::exists(dir / "report" / "tradeoff.csv"));
    CHECK(fs::exists(dir / "report" / "tradeoff.svg"));
    CHECK(fs::exists(dir / "report" / "ablation.csv"));
    fs::remove_all(dir);
}
