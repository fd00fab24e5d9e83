// End-to-end checks of the command-line tool: wiring, exit codes, stderr
// categories and output determinism. The statistical behavior itself is
// covered by the library suites.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "twostage/csv_io.hpp"
#include "twostage/rng.hpp"
#include "twostage/types.hpp"

namespace fs = std::filesystem;
using namespace twostage;

namespace {

int failures = 0;

void check(bool ok, const std::string& name, const std::string& detail = "") {
    std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
                detail.empty() ? "" : ": ", detail.c_str());
    if (!ok) ++failures;
}

struct RunResult {
    int exit_code;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path errfile = dir / "stderr.txt";
    std::string cmd = std::string(TWOSTAGE_CLI_PATH) + " " + args + " >" +
                      (dir / "stdout.txt").string() + " 2>" + errfile.string();
    int rc = std::system(cmd.c_str());
    std::ifstream err(errfile);
    std::ostringstream ss;
    ss << err.rdbuf();
    return {rc == 0 ? 0 : 1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_cluster_file(const fs::path& path, int g) {
    Philox rng(7, 0);
    std::vector<ClusterRecord> clusters;
    for (int i = 0; i < g; ++i) {
        ClusterRecord cl;
        cl.cluster_id = "cl" + std::to_string(i);
        cl.n_g = 2;
        cl.c = {rng.uniform01()};
        clusters.push_back(std::move(cl));
    }
    write_clusters_csv(path.string(), clusters);
}

void write_unit_file(const fs::path& path, int g) {
    Philox rng(8, 0);
    std::vector<ClusterRecord> clusters;
    for (int i = 0; i < g; ++i) {
        ClusterRecord cl;
        cl.cluster_id = "cl" + std::to_string(i);
        cl.n_g = 2;
        for (int u = 0; u < 2; ++u) {
            UnitRecord ur;
            ur.unit_id = "u" + std::to_string(u);
            ur.outcome = rng.normal();
            ur.x = {rng.normal(), rng.uniform01()};
            cl.units.push_back(std::move(ur));
        }
        clusters.push_back(std::move(cl));
    }
    write_units_csv(path.string(), clusters);
}

}  // namespace

int main() {
    const fs::path dir = fs::temp_directory_path() / "twostage_cli_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Design config: matched pairs on c_1, complete second stage.
    const fs::path design = dir / "design.json";
    {
        std::ofstream out(design);
        out << R"({
  "rounding": "floor",
  "first_stage": {"mechanism": "matched_tuples", "k": 2, "l": 1,
                   "score": {"kind": "column", "name": "c_1"}},
  "second_stage": {"mechanism": "complete", "pi2": 0.5}
})";
    }

    // assign: 200 clusters -> 100 tuples in the manifest, deterministic.
    write_cluster_file(dir / "clusters.csv", 200);
    write_unit_file(dir / "units.csv", 200);
    auto r = run_cli("assign --clusters " + (dir / "clusters.csv").string() +
                         " --units " + (dir / "units.csv").string() + " --design " +
                         design.string() + " --seed 7 --out " + (dir / "a1").string(),
                     dir);
    check(r.exit_code == 0, "assign exits cleanly", r.err);
    std::string manifest = slurp(dir / "a1" / "design_manifest.json");
    const auto parsed = nlohmann::json::parse(manifest);
    check(parsed.at("tuples").size() == 100, "manifest holds 100 tuples",
          std::to_string(parsed.at("tuples").size()));

    r = run_cli("assign --clusters " + (dir / "clusters.csv").string() + " --units " +
                    (dir / "units.csv").string() + " --design " + design.string() +
                    " --seed 7 --out " + (dir / "a2").string(),
                dir);
    check(r.exit_code == 0 &&
              slurp(dir / "a2" / "design_manifest.json") == manifest &&
              slurp(dir / "a2" / "units_assigned.csv") ==
                  slurp(dir / "a1" / "units_assigned.csv"),
          "rerun with the same seed is byte-identical");

    // Indivisible cluster count fails with the remainder named.
    write_cluster_file(dir / "five.csv", 5);
    r = run_cli("assign --clusters " + (dir / "five.csv").string() + " --design " +
                    design.string() + " --seed 1 --out " + (dir / "a3").string(),
                dir);
    check(r.exit_code != 0 && r.err.find("not divisible") != std::string::npos &&
              r.err.find("[validation]") != std::string::npos,
          "indivisible count fails with a validation error", r.err);

    // sbr first stage with quantile cuts on c_1.
    const fs::path sbr_design = dir / "sbr.json";
    {
        std::ofstream out(sbr_design);
        out << R"({
  "first_stage": {"mechanism": "sbr", "pi1": 0.5, "n_strata": 4,
                   "score": {"kind": "column", "name": "c_1"}},
  "second_stage": {"mechanism": "sbr", "pi2": 0.5, "n_strata": 2,
                    "score": {"kind": "column", "name": "x_1"}}
})";
    }
    r = run_cli("assign --clusters " + (dir / "clusters.csv").string() + " --units " +
                    (dir / "units.csv").string() + " --design " + sbr_design.string() +
                    " --seed 3 --out " + (dir / "a4").string(),
                dir);
    check(r.exit_code == 0, "sbr assign exits cleanly", r.err);
    {
        auto assigned = read_clusters_csv((dir / "a4" / "clusters_assigned.csv").string());
        int treated = 0;
        std::set<std::string> labels;
        for (const auto& cl : assigned) {
            treated += cl.h > 0 ? 1 : 0;
            labels.insert(cl.s_g);
        }
        check(treated == 100 && labels.size() == 4,
              "sbr assignment treats half within four strata",
              std::to_string(treated) + " treated, " +
                  std::to_string(labels.size()) + " strata");
    }

    // analyze the assigned panel.
    r = run_cli("analyze --clusters " + (dir / "a1" / "clusters_assigned.csv").string() +
                    " --units " + (dir / "a1" / "units_assigned.csv").string() +
                    " --manifest " + (dir / "a1" / "design_manifest.json").string() +
                    " --method adjusted --method ols_robust --method ols_cluster" +
                    " --out " + (dir / "an1").string(),
                dir);
    check(r.exit_code == 0, "analyze exits cleanly", r.err);
    std::string report = slurp(dir / "an1" / "report.json");
    check(report.find("theta_p1") != std::string::npos &&
              report.find("theta_s2") != std::string::npos &&
              report.find("\"v1\"") != std::string::npos &&
              report.find("ols_cluster") != std::string::npos,
          "report carries the four estimands and requested comparators");

    // Covariate adjustment through the CLI (matched-tuples manifest).
    r = run_cli("analyze --clusters " + (dir / "a1" / "clusters_assigned.csv").string() +
                    " --units " + (dir / "a1" / "units_assigned.csv").string() +
                    " --manifest " + (dir / "a1" / "design_manifest.json").string() +
                    " --psi x:1 --psi ng --out " + (dir / "an_psi").string(),
                dir);
    check(r.exit_code == 0 &&
              slurp(dir / "an_psi" / "report.json").find("theta_p2_adj") !=
                  std::string::npos,
          "psi flags produce the adjusted estimand", r.err);

    // A panel with no control clusters is rejected.
    {
        auto clusters = read_clusters_csv((dir / "a1" / "clusters_assigned.csv").string());
        for (auto& cl : clusters) cl.h = 0.5;
        write_clusters_csv((dir / "bad.csv").string(), clusters);
    }
    r = run_cli("analyze --clusters " + (dir / "bad.csv").string() + " --units " +
                    (dir / "a1" / "units_assigned.csv").string() + " --out " +
                    (dir / "an2").string(),
                dir);
    check(r.exit_code != 0 && r.err.find("[validation]") != std::string::npos,
          "missing control arm fails with a validation error", r.err);

    // simulate: a quick grid, deterministic outputs, config validation.
    const fs::path simcfg = dir / "sim.json";
    {
        std::ofstream out(simcfg);
        out << R"({
  "model": "homogeneous", "g": 30, "replications": 20, "seed": 99,
  "kind": "mse_ratio", "estimands": ["theta_p1", "theta_p2"],
  "pairs": [{"first": "MT-A", "second": "C"},
             {"first": "S-2", "second": "S-2"},
             {"first": "C", "second": "C"}]
})";
    }
    r = run_cli("simulate --config " + simcfg.string() + " --out " +
                    (dir / "s1").string(),
                dir);
    check(r.exit_code == 0, "simulate exits cleanly", r.err);
    std::string csv1 = slurp(dir / "s1" / "mc_table.csv");
    check(csv1.find("MT-A,C,theta_p1") != std::string::npos &&
              csv1.find("S-2,S-2,theta_p2") != std::string::npos,
          "six cells emitted");
    r = run_cli("simulate --config " + simcfg.string() + " --out " +
                    (dir / "s2").string(),
                dir);
    check(r.exit_code == 0 && slurp(dir / "s2" / "mc_table.csv") == csv1,
          "identical config reproduces identical tables");

    const fs::path badcfg = dir / "bad.json";
    {
        std::ofstream out(badcfg);
        out << R"({"seed": 1, "replications": 0,
                    "pairs": [{"first": "C", "second": "C"}]})";
    }
    r = run_cli("simulate --config " + badcfg.string() + " --out " +
                    (dir / "s3").string(),
                dir);
    check(r.exit_code != 0 && r.err.find("[config]") != std::string::npos,
          "zero replications fails with a config error", r.err);

    std::printf("%s (%d failure%s)\n", failures ? "FAILURE" : "SUCCESS", failures,
                failures == 1 ? "" : "s");
    return failures ? 1 : 0;
}
