#include "twostage/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "twostage/errors.hpp"
#include "twostage/regress.hpp"
#include "twostage/stats.hpp"

namespace twostage {

using nlohmann::json;

namespace {

json score_to_json(const ScoreSource& s) {
    return {{"kind", s.kind == ScoreSource::Kind::column ? "column" : "index"},
            {"name", s.name}};
}

ScoreSource score_from_json(const json& j) {
    ScoreSource s;
    std::string kind = j.value("kind", std::string("column"));
    s.kind = kind == "index" ? ScoreSource::Kind::index : ScoreSource::Kind::column;
    s.name = j.value("name", std::string());
    return s;
}

}  // namespace

std::string manifest_to_json(const DesignManifest& m) {
    json j;
    j["mechanism"] = to_string(m.mechanism);
    j["k"] = m.k;
    j["l"] = m.l;
    j["pi1"] = m.pi1;
    j["pi2"] = m.pi2;
    j["seed"] = m.seed;
    j["rounding"] = m.rounding;
    j["first_stage_score"] = score_to_json(m.first_score);
    if (m.has_second) {
        j["second_stage"] = {{"mechanism", to_string(m.second.mechanism)},
                             {"pi2", m.second.pi2},
                             {"score", score_to_json(m.second.score)},
                             {"n_strata", m.second.n_strata}};
    }
    if (m.mechanism == Mechanism::matched_tuples) {
        j["tuples"] = m.tuples.tuples;
        j["tuple_scores"] = m.tuples.tuple_scores;
    }
    return j.dump(2) + "\n";
}

DesignManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCategory::config,
                    std::string("manifest parse error: ") + e.what());
    }
    DesignManifest m;
    try {
        m.mechanism = mechanism_from_string(j.at("mechanism").get<std::string>());
        m.k = j.value("k", 2);
        m.l = j.value("l", 1);
        m.pi1 = j.at("pi1").get<double>();
        m.pi2 = j.value("pi2", 0.5);
        m.seed = j.value("seed", 0ULL);
        m.rounding = j.value("rounding", std::string("floor"));
        if (j.contains("first_stage_score"))
            m.first_score = score_from_json(j.at("first_stage_score"));
        if (j.contains("second_stage")) {
            m.has_second = true;
            const auto& s = j.at("second_stage");
            m.second.mechanism = mechanism_from_string(s.at("mechanism").get<std::string>());
            m.second.pi2 = s.value("pi2", m.pi2);
            m.second.n_strata = s.value("n_strata", 2);
            if (s.contains("score")) m.second.score = score_from_json(s.at("score"));
        }
        if (m.mechanism == Mechanism::matched_tuples) {
            m.tuples.mode = StrataMode::small_strata;
            m.tuples.k = m.k;
            m.tuples.l = m.l;
            m.tuples.tuples =
                j.at("tuples").get<std::vector<std::vector<std::string>>>();
            if (j.contains("tuple_scores"))
                m.tuples.tuple_scores = j.at("tuple_scores").get<std::vector<double>>();
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCategory::config,
                    std::string("bad manifest field: ") + e.what());
    }
    return m;
}

namespace {

std::vector<std::vector<double>> build_psi(const ExperimentPanel& panel,
                                           const std::vector<std::string>& spec) {
    std::vector<std::vector<double>> psi(panel.clusters.size());
    for (const auto& s : spec) {
        std::vector<std::vector<double>> part;
        if (s.rfind("x:", 0) == 0) {
            part = psi_cluster_mean_x(panel, static_cast<std::size_t>(
                                                 std::stoi(s.substr(2))) - 1);
        } else if (s.rfind("c:", 0) == 0) {
            const std::size_t col = static_cast<std::size_t>(std::stoi(s.substr(2))) - 1;
            part.reserve(panel.clusters.size());
            for (const auto& cl : panel.clusters) {
                if (col >= cl.c.size())
                    throw Error(ErrorCategory::validation,
                                "cluster " + cl.cluster_id +
                                    " lacks covariate column c_" +
                                    std::to_string(col + 1));
                part.push_back({cl.c[col]});
            }
        } else if (s == "ng") {
            part = psi_ng_power(panel, 1);
        } else if (s == "ng2") {
            part = psi_ng_power(panel, 2);
        } else {
            throw Error(ErrorCategory::config, "unknown psi spec '" + s + "'");
        }
        for (std::size_t i = 0; i < psi.size(); ++i)
            psi[i].push_back(part[i][0]);
    }
    return psi;
}

}  // namespace

EstimateReport analyze_panel(const ExperimentPanel& panel,
                             const std::optional<DesignManifest>& manifest,
                             const AnalysisOptions& opts) {
    auto val = validate_panel(panel);
    if (!val.pass) {
        std::string msg = "panel validation failed:";
        int listed = 0, skipped = 0;
        for (const auto& v : val.violations) {
            if (v.severity != Violation::Severity::error) continue;
            if (listed < 12) {
                msg += "\n  [" + v.code + "] " +
                       (v.where.empty() ? "" : v.where + ": ") + v.message;
                ++listed;
            } else {
                ++skipped;
            }
        }
        if (skipped > 0)
            msg += "\n  ... and " + std::to_string(skipped) + " more violation(s)";
        throw Error(ErrorCategory::validation, msg);
    }

    ExperimentPanel work = panel;
    if (manifest && manifest->mechanism == Mechanism::matched_tuples &&
        !work.tuple_structure)
        work.tuple_structure = manifest->tuples;

    EstimateReport rep;
    rep.alpha = opts.alpha;
    rep.g = static_cast<int>(work.clusters.size());

    auto av = cluster_averages(work);
    auto pe = point_estimates(av, opts.estimate);
    rep.g1 = pe.g1;
    rep.g0 = pe.g0;

    // Analysis pi1: the design target when recorded, else the realized share.
    if (manifest && !opts.empirical_pi1) {
        rep.pi1_used = manifest->pi1;
        rep.pi1_source = "manifest";
    } else {
        rep.pi1_used = static_cast<double>(pe.g1) / rep.g;
        rep.pi1_source = "empirical";
    }

    const bool small = (manifest && manifest->mechanism == Mechanism::matched_tuples) ||
                       (!manifest && work.tuple_structure &&
                        work.tuple_structure->mode == StrataMode::small_strata);
    rep.strata_mode = small ? "small_strata" : "large_strata";

    double tau = 0.0;
    std::string tau_spec = "zero";
    if (opts.tau_override) {
        tau = *opts.tau_override;
        tau_spec = "override";
    } else if (opts.tau_bernoulli) {
        tau = rep.pi1_used * (1.0 - rep.pi1_used);
        tau_spec = "bernoulli";
    }

    const bool want_adjusted =
        std::find(opts.methods.begin(), opts.methods.end(), "adjusted") !=
        opts.methods.end();

    if (want_adjusted) {
        const double theta[4] = {pe.theta_p1, pe.theta_p2, pe.theta_s1, pe.theta_s2};
        const char* names[4] = {"theta_p1", "theta_p2", "theta_s1", "theta_s2"};
        const EffectArm arms[4] = {EffectArm::primary, EffectArm::primary,
                                   EffectArm::spillover, EffectArm::spillover};
        const Weighting ws[4] = {Weighting::equal, Weighting::size, Weighting::equal,
                                 Weighting::size};
        for (int e = 0; e < 4; ++e) {
            VarianceEstimate v;
            if (small) {
                v = v_hat_small_strata(work, arms[e], ws[e]);
            } else {
                // Clusters without labels form a single stratum.
                v = v_hat_large_strata(work, arms[e], ws[e], rep.pi1_used, tau);
            }
            auto t = adjusted_t_test(theta[e], v, rep.g, 0.0, opts.alpha);
            EstimandReport er;
            er.name = names[e];
            er.estimate = theta[e];
            er.variance_estimator = to_string(v.kind);
            er.v = v.v;
            er.se = v.se;
            er.tstat = t.tstat;
            er.pvalue = t.pvalue;
            er.reject = t.reject;
            er.ci_lo = t.ci_lo;
            er.ci_hi = t.ci_hi;
            er.floored = v.floored;
            er.tau_spec = small ? "-" : tau_spec;
            rep.estimands.push_back(er);
        }

        if (!opts.psi.empty()) {
            if (!small)
                throw Error(ErrorCategory::validation,
                            "covariate adjustment needs a matched-tuples design");
            auto psi = build_psi(work, opts.psi);
            auto tuples = tuples_as_indices(work);
            const auto& ts = *work.tuple_structure;
            auto adj = covariate_adjusted_estimate(av, psi, tuples, ts.k, ts.l);
            const std::vector<double>* scores =
                ts.tuple_scores.size() == ts.tuples.size() && !ts.tuple_scores.empty()
                    ? &ts.tuple_scores
                    : nullptr;
            auto v = covariate_adjusted_variance(av, tuples, ts.k, ts.l, psi, adj.beta,
                                                 scores);
            auto t = adjusted_t_test(adj.theta_p2_adj, v, rep.g, 0.0, opts.alpha);
            EstimandReport er;
            er.name = "theta_p2_adj";
            er.estimate = adj.theta_p2_adj;
            er.variance_estimator = to_string(v.kind);
            er.v = v.v;
            er.se = v.se;
            er.tstat = t.tstat;
            er.pvalue = t.pvalue;
            er.reject = t.reject;
            er.ci_lo = t.ci_lo;
            er.ci_hi = t.ci_hi;
            er.floored = v.floored;
            er.tau_spec = "-";
            rep.estimands.push_back(er);
        }
    }

    const double crit = normal_quantile(1.0 - opts.alpha / 2.0);
    for (const auto& method : opts.methods) {
        if (method == "adjusted") continue;
        RegressionSpec spec;
        spec.weights = WeightScheme::unweighted;
        if (method == "ols_robust") {
            spec.fixed_effects = false;
            spec.se_type = SeType::hc_robust;
        } else if (method == "ols_cluster") {
            spec.fixed_effects = false;
            spec.se_type = SeType::cluster;
        } else if (method == "ols_fe_robust") {
            spec.fixed_effects = true;
            spec.se_type = SeType::hc_robust;
        } else if (method == "ols_fe_cluster") {
            spec.fixed_effects = true;
            spec.se_type = SeType::cluster;
        } else {
            throw Error(ErrorCategory::config, "unknown method '" + method + "'");
        }
        auto fit = ols_inference(work, spec);
        OlsMethodReport o;
        o.method = method;
        o.beta1 = fit.beta1;
        o.se_beta1 = fit.se_beta1;
        o.ci1_lo = fit.beta1 - crit * fit.se_beta1;
        o.ci1_hi = fit.beta1 + crit * fit.se_beta1;
        o.p1 = 2.0 * (1.0 - normal_cdf(std::abs(fit.beta1 / fit.se_beta1)));
        o.beta2 = fit.beta2;
        o.se_beta2 = fit.se_beta2;
        o.ci2_lo = fit.beta2 - crit * fit.se_beta2;
        o.ci2_hi = fit.beta2 + crit * fit.se_beta2;
        o.p2 = 2.0 * (1.0 - normal_cdf(std::abs(fit.beta2 / fit.se_beta2)));
        rep.ols.push_back(o);
    }

    return rep;
}

std::string report_to_json(const EstimateReport& r) {
    json j;
    j["g"] = r.g;
    j["g1"] = r.g1;
    j["g0"] = r.g0;
    j["pi1_used"] = r.pi1_used;
    j["pi1_source"] = r.pi1_source;
    j["alpha"] = r.alpha;
    j["strata_mode"] = r.strata_mode;
    j["estimands"] = json::object();
    for (const auto& e : r.estimands) {
        j["estimands"][e.name] = {
            {"estimate", e.estimate}, {"variance_estimator", e.variance_estimator},
            {"v", e.v},               {"se", e.se},
            {"tstat", e.tstat},       {"pvalue", e.pvalue},
            {"reject", e.reject},     {"ci", {e.ci_lo, e.ci_hi}},
            {"floored", e.floored},   {"tau_spec", e.tau_spec}};
    }
    if (!r.ols.empty()) {
        j["ols"] = json::object();
        for (const auto& o : r.ols) {
            j["ols"][o.method] = {{"beta1", o.beta1},
                                  {"se_beta1", o.se_beta1},
                                  {"ci1", {o.ci1_lo, o.ci1_hi}},
                                  {"pvalue1", o.p1},
                                  {"beta2", o.beta2},
                                  {"se_beta2", o.se_beta2},
                                  {"ci2", {o.ci2_lo, o.ci2_hi}},
                                  {"pvalue2", o.p2}};
        }
    }
    return j.dump(2) + "\n";
}

std::string report_to_text(const EstimateReport& r) {
    std::ostringstream out;
    out << "clusters: " << r.g << " (treated " << r.g1 << ", control " << r.g0
        << ")  pi1: " << std::setprecision(6) << r.pi1_used << " [" << r.pi1_source
        << "]  mode: " << r.strata_mode << "  alpha: " << r.alpha << "\n\n";
    out << std::left << std::setw(14) << "estimand" << std::right << std::setw(12)
        << "estimate" << std::setw(8) << "est." << std::setw(12) << "se"
        << std::setw(24) << "ci" << std::setw(12) << "p-value" << std::setw(8)
        << "reject" << '\n';
    out << std::fixed;
    for (const auto& e : r.estimands) {
        std::ostringstream ci;
        ci << std::fixed << std::setprecision(4) << '[' << e.ci_lo << ", " << e.ci_hi
           << ']';
        out << std::left << std::setw(14) << e.name << std::right << std::setw(12)
            << std::setprecision(4) << e.estimate << std::setw(8)
            << e.variance_estimator << std::setw(12) << std::setprecision(4) << e.se
            << std::setw(24) << ci.str() << std::setw(12) << std::setprecision(4)
            << e.pvalue << std::setw(8) << (e.reject ? "yes" : "no");
        if (e.floored) out << "  (variance floored)";
        out << '\n';
    }
    if (!r.ols.empty()) {
        out << '\n'
            << std::left << std::setw(16) << "ols method" << std::right
            << std::setw(12) << "primary" << std::setw(12) << "se" << std::setw(24)
            << "ci" << std::setw(12) << "spillover" << std::setw(12) << "se"
            << std::setw(24) << "ci" << '\n';
        for (const auto& o : r.ols) {
            std::ostringstream c1, c2;
            c1 << std::fixed << std::setprecision(4) << '[' << o.ci1_lo << ", "
               << o.ci1_hi << ']';
            c2 << std::fixed << std::setprecision(4) << '[' << o.ci2_lo << ", "
               << o.ci2_hi << ']';
            out << std::left << std::setw(16) << o.method << std::right
                << std::setw(12) << std::setprecision(4) << o.beta1 << std::setw(12)
                << o.se_beta1 << std::setw(24) << c1.str() << std::setw(12) << o.beta2
                << std::setw(12) << o.se_beta2 << std::setw(24) << c2.str() << '\n';
        }
    }
    return out.str();
}

}  // namespace twostage
