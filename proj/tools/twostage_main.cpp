#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "twostage/assign.hpp"
#include "twostage/csv_io.hpp"
#include "twostage/errors.hpp"
#include "twostage/report.hpp"
#include "twostage/rng.hpp"
#include "twostage/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace twostage;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::io, "cannot write " + path);
    out << text;
    if (!out) throw Error(ErrorCategory::io, "write failed for " + path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCategory::io, "cannot create directory " + dir);
}

// Cluster-level matching / stratification score per the design spec.
std::vector<double> cluster_scores(const std::vector<ClusterRecord>& clusters,
                                   const ScoreSource& score) {
    std::vector<double> s(clusters.size(), 0.0);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        const auto& cl = clusters[i];
        const double c1 = cl.c.empty() ? 0.0 : cl.c[0];
        if (score.kind == ScoreSource::Kind::index) {
            if (score.name == "index_equal")
                s[i] = optimal_index_first_stage(c1, cl.n_g, Weighting::equal);
            else if (score.name == "index_size")
                s[i] = optimal_index_first_stage(c1, cl.n_g, Weighting::size);
            else
                throw Error(ErrorCategory::config,
                            "unknown index function '" + score.name + "'");
        } else if (score.name == "n_g") {
            s[i] = cl.n_g;
        } else if (score.name.rfind("c_", 0) == 0) {
            const std::size_t col =
                static_cast<std::size_t>(std::stoi(score.name.substr(2))) - 1;
            if (col >= cl.c.size())
                throw Error(ErrorCategory::validation,
                            "cluster " + cl.cluster_id + " lacks column " + score.name);
            s[i] = cl.c[col];
        } else if (score.name.empty()) {
            s[i] = 0.0;
        } else {
            throw Error(ErrorCategory::config,
                        "first-stage score must be c_<j>, n_g or a named index; got '" +
                            score.name + "'");
        }
    }
    return s;
}

struct AssignDesign {
    FirstStageDesign first;
    SecondStageDesign second;
    bool has_second = false;
    Rounding rounding = Rounding::floor;
};

AssignDesign assign_design_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCategory::config, std::string("design parse error: ") + e.what());
    }
    AssignDesign d;
    try {
        const auto& f = j.at("first_stage");
        d.first.mechanism = mechanism_from_string(f.at("mechanism").get<std::string>());
        d.first.k = f.value("k", 2);
        d.first.l = f.value("l", 1);
        if (f.contains("pi1")) d.first.pi1 = f.at("pi1").get<double>();
        d.first.n_strata = f.value("n_strata", 2);
        if (f.contains("score")) {
            std::string kind = f.at("score").value("kind", std::string("column"));
            d.first.score.kind = kind == "index" ? ScoreSource::Kind::index
                                                 : ScoreSource::Kind::column;
            d.first.score.name = f.at("score").value("name", std::string());
        }
        if (j.contains("second_stage")) {
            d.has_second = true;
            const auto& s = j.at("second_stage");
            d.second.mechanism =
                mechanism_from_string(s.at("mechanism").get<std::string>());
            d.second.pi2 = s.value("pi2", 0.5);
            d.second.n_strata = s.value("n_strata", 2);
            if (s.contains("k")) d.second.k = s.at("k").get<int>();
            if (s.contains("l")) d.second.l = s.at("l").get<int>();
            if (s.contains("score")) {
                std::string kind = s.at("score").value("kind", std::string("column"));
                d.second.score.kind = kind == "index" ? ScoreSource::Kind::index
                                                      : ScoreSource::Kind::column;
                d.second.score.name = s.at("score").value("name", std::string());
            }
        }
        std::string rounding = j.value("rounding", std::string("floor"));
        if (rounding == "ceiling") d.rounding = Rounding::ceiling;
        else if (rounding != "floor")
            throw Error(ErrorCategory::config, "rounding must be floor or ceiling");
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCategory::config, std::string("bad design field: ") + e.what());
    }
    return d;
}

int cmd_assign(const std::string& clusters_path, const std::string& units_path,
               const std::string& design_path, std::uint64_t seed,
               const std::string& out_dir) {
    auto clusters = read_clusters_csv(clusters_path);
    if (!units_path.empty()) read_units_csv(units_path, clusters);
    AssignDesign design = assign_design_from_json(read_file(design_path));
    const double pi1 = resolved_pi1(design.first);
    const double pi2 = design.has_second ? design.second.pi2 : 0.5;

    DesignManifest manifest;
    manifest.mechanism = design.first.mechanism;
    manifest.k = design.first.k;
    manifest.l = design.first.l;
    manifest.pi1 = pi1;
    manifest.pi2 = pi2;
    manifest.seed = seed;
    manifest.rounding = design.rounding == Rounding::floor ? "floor" : "ceiling";
    manifest.first_score = design.first.score;
    manifest.second = design.second;
    manifest.has_second = design.has_second;

    // Stage one: stream 0 of the master seed.
    std::vector<uint8_t> treated;
    switch (design.first.mechanism) {
        case Mechanism::matched_tuples: {
            auto scores = cluster_scores(clusters, design.first.score);
            auto mr = match_tuples(scores, design.first.k, design.first.l, seed);
            treated = mr.treated;
            std::vector<std::string> ids;
            ids.reserve(clusters.size());
            for (const auto& cl : clusters) ids.push_back(cl.cluster_id);
            manifest.tuples =
                to_tuple_structure(mr, ids, design.first.k, design.first.l);
            for (std::size_t j = 0; j < mr.tuples.size(); ++j)
                for (int idx : mr.tuples[j])
                    clusters[static_cast<std::size_t>(idx)].s_g =
                        "t" + std::to_string(j);
            break;
        }
        case Mechanism::sbr: {
            std::vector<int> dense;
            int ns;
            if (design.first.score.name.empty()) {
                // Pre-existing labels drive the blocks.
                std::vector<std::string> labels;
                for (const auto& cl : clusters) {
                    if (cl.s_g.empty())
                        throw Error(ErrorCategory::validation,
                                    "sbr without a score needs s_g labels; cluster " +
                                        cl.cluster_id + " has none");
                    labels.push_back(cl.s_g);
                }
                ns = densify_labels(labels, dense);
            } else {
                auto scores = cluster_scores(clusters, design.first.score);
                auto cuts = empirical_quantile_cuts(scores, design.first.n_strata);
                dense = bins_from_cutpoints(scores, cuts);
                ns = static_cast<int>(cuts.size()) + 1;
                for (std::size_t i = 0; i < clusters.size(); ++i)
                    clusters[i].s_g = "s" + std::to_string(dense[i]);
            }
            treated = stratified_block_assign(dense, ns, pi1, seed);
            break;
        }
        case Mechanism::complete: {
            treated = complete_randomize(static_cast<int>(clusters.size()), pi1, seed);
            for (auto& cl : clusters) cl.s_g = "all";
            break;
        }
    }
    for (std::size_t i = 0; i < clusters.size(); ++i)
        clusters[i].h = treated[i] ? pi2 : 0.0;

    // Stage two: per-cluster streams 1 + cluster index.
    if (!units_path.empty() && design.has_second) {
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            auto& cl = clusters[i];
            for (auto& u : cl.units) u.z = 0;
            if (!treated[i]) continue;
            if (static_cast<int>(cl.units.size()) != cl.n_g)
                throw Error(ErrorCategory::validation,
                            "cluster " + cl.cluster_id +
                                " needs its full unit roster for assignment");
            std::vector<double> scores(cl.units.size(), 0.0);
            if (!design.second.score.name.empty()) {
                const std::string& nm = design.second.score.name;
                for (std::size_t uu = 0; uu < cl.units.size(); ++uu) {
                    const auto& x = cl.units[uu].x;
                    if (design.second.score.kind == ScoreSource::Kind::index) {
                        if (nm != "ratio" || x.size() < 2)
                            throw Error(ErrorCategory::config,
                                        "unit index function must be 'ratio' over "
                                        "x_1, x_2");
                        scores[uu] = x[0] / (x[1] + 0.1);
                    } else {
                        if (nm.rfind("x_", 0) != 0)
                            throw Error(ErrorCategory::config,
                                        "unit score column must be x_<j>");
                        std::size_t col =
                            static_cast<std::size_t>(std::stoi(nm.substr(2))) - 1;
                        if (col >= x.size())
                            throw Error(ErrorCategory::validation,
                                        "cluster " + cl.cluster_id +
                                            " lacks unit column " + nm);
                        scores[uu] = x[col];
                    }
                }
            }
            Philox rng(seed, 1 + static_cast<std::uint64_t>(i));
            std::vector<int> groups;
            auto z = assign_second_stage_scores(scores, design.second, rng, &groups);
            for (std::size_t uu = 0; uu < cl.units.size(); ++uu) {
                cl.units[uu].z = z[uu];
                cl.units[uu].second_stage_stratum =
                    "g" + std::to_string(groups[uu]);
            }
        }
    }

    ensure_dir(out_dir);
    write_clusters_csv(out_dir + "/clusters_assigned.csv", clusters);
    if (!units_path.empty())
        write_units_csv(out_dir + "/units_assigned.csv", clusters);
    write_file(out_dir + "/design_manifest.json", manifest_to_json(manifest));
    std::cout << "assigned " << clusters.size() << " clusters ("
              << to_string(design.first.mechanism) << ", pi1 = " << pi1 << ")\n";
    return 0;
}

int cmd_analyze(const std::string& clusters_path, const std::string& units_path,
                const std::string& manifest_path, const AnalysisOptions& opts,
                const std::string& out_dir) {
    auto clusters = read_clusters_csv(clusters_path);
    read_units_csv(units_path, clusters);

    std::optional<DesignManifest> manifest;
    if (!manifest_path.empty())
        manifest = manifest_from_json(read_file(manifest_path));

    ExperimentPanel panel;
    panel.clusters = std::move(clusters);
    panel.pi2 = manifest ? manifest->pi2 : 0.5;
    if (!manifest) {
        // Infer pi2 from the treated clusters' recorded h.
        for (const auto& cl : panel.clusters)
            if (cl.h > 0.0) {
                panel.pi2 = cl.h;
                break;
            }
    }
    panel.pi1 = manifest ? manifest->pi1 : 0.5;

    auto report = analyze_panel(panel, manifest, opts);
    ensure_dir(out_dir);
    write_file(out_dir + "/report.json", report_to_json(report));
    const std::string text = report_to_text(report);
    write_file(out_dir + "/report.txt", text);
    std::cout << text;
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir) {
    SimConfig cfg = sim_config_from_json(read_file(config_path));
    McTable table = run_mc_grid(cfg);
    ensure_dir(out_dir);
    write_file(out_dir + "/mc_table.json", mc_table_to_json(table));
    write_file(out_dir + "/mc_table.csv", mc_table_to_csv(table));
    const std::string text = mc_table_to_text(table);
    write_file(out_dir + "/mc_table.txt", text);
    std::cout << text;
    for (const auto& c : table.cells)
        std::cout << c.first << "/" << c.second << " " << c.estimand << ": "
                  << c.value << " (mc se " << c.mc_se << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage randomized experiment toolkit"};
    app.require_subcommand(1);

    std::string clusters_path, units_path, design_path, manifest_path, config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* assign = app.add_subcommand("assign", "draw a two-stage assignment");
    assign->add_option("--clusters", clusters_path, "clusters.csv")->required();
    assign->add_option("--units", units_path, "units.csv (full rosters)");
    assign->add_option("--design", design_path, "design config JSON")->required();
    assign->add_option("--seed", seed, "master seed")->required();
    assign->add_option("--out", out_dir, "output directory")->required();

    AnalysisOptions aopts;
    std::string tau_spec;
    auto* analyze = app.add_subcommand("analyze", "estimate effects and tests");
    analyze->add_option("--clusters", clusters_path, "clusters.csv")->required();
    analyze->add_option("--units", units_path, "units.csv")->required();
    analyze->add_option("--manifest", manifest_path, "design_manifest.json");
    analyze->add_option("--method", aopts.methods,
                        "adjusted | ols_robust | ols_cluster | ols_fe_robust | "
                        "ols_fe_cluster (repeatable)");
    analyze->add_option("--alpha", aopts.alpha, "test level");
    analyze->add_option("--tau", tau_spec,
                        "stratum imbalance scale: a number or 'bernoulli'");
    analyze->add_flag("--empirical-pi1", aopts.empirical_pi1,
                      "use the realized treated share instead of the manifest pi1");
    analyze->add_flag("--allow-missing-control-arm",
                      aopts.estimate.allow_missing_control_arm,
                      "drop treated clusters without control units from the "
                      "spillover averages");
    analyze->add_option("--psi", aopts.psi,
                        "adjustment covariates: x:<j> | c:<j> | ng | ng2 "
                        "(repeatable)");
    analyze->add_option("--out", out_dir, "output directory")->required();

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo design grids");
    simulate->add_option("--config", config_path, "SimConfig JSON")->required();
    simulate->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);
    (void)seed_set;

    try {
        if (assign->parsed())
            return cmd_assign(clusters_path, units_path, design_path, seed, out_dir);
        if (analyze->parsed()) {
            if (!tau_spec.empty()) {
                if (tau_spec == "bernoulli") aopts.tau_bernoulli = true;
                else aopts.tau_override = std::stod(tau_spec);
            }
            if (aopts.methods.empty()) aopts.methods = {"adjusted"};
            return cmd_analyze(clusters_path, units_path, manifest_path, aopts,
                               out_dir);
        }
        if (simulate->parsed()) return cmd_simulate(config_path, out_dir);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.category()) << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error [numeric]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
