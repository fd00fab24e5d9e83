#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twostage/assign.hpp"
#include "twostage/estimate.hpp"
#include "twostage/types.hpp"
#include "twostage/variance.hpp"

namespace twostage {

// Assignment provenance written by `assign` and consumed by `analyze`.
struct DesignManifest {
    Mechanism mechanism = Mechanism::matched_tuples;
    int k = 2;
    int l = 1;
    double pi1 = 0.5;
    double pi2 = 0.5;
    std::uint64_t seed = 0;
    std::string rounding = "floor";
    ScoreSource first_score;
    SecondStageDesign second;
    bool has_second = false;
    TupleStructure tuples;  // small-strata designs only
};

std::string manifest_to_json(const DesignManifest& m);
DesignManifest manifest_from_json(const std::string& text);

struct AnalysisOptions {
    double alpha = 0.05;
    // Large-strata imbalance scale: override wins, else pi1*(1-pi1) under
    // the bernoulli flag, else 0 (block-balanced assignment).
    std::optional<double> tau_override;
    bool tau_bernoulli = false;
    bool empirical_pi1 = false;
    std::vector<std::string> methods = {"adjusted"};
    EstimateOptions estimate;
    // Cluster-level adjustment covariates: "x:<j>" sampled-unit mean of
    // x_j, "c:<j>" cluster covariate, "ng"/"ng2" size powers.
    std::vector<std::string> psi;
};

struct EstimandReport {
    std::string name;
    double estimate = 0.0;
    std::string variance_estimator;
    double v = 0.0;
    double se = 0.0;
    double tstat = 0.0;
    double pvalue = 1.0;
    bool reject = false;
    double ci_lo = 0.0, ci_hi = 0.0;
    bool floored = false;
    std::string tau_spec;
};

struct OlsMethodReport {
    std::string method;
    double beta1 = 0.0, se_beta1 = 0.0, ci1_lo = 0.0, ci1_hi = 0.0, p1 = 1.0;
    double beta2 = 0.0, se_beta2 = 0.0, ci2_lo = 0.0, ci2_hi = 0.0, p2 = 1.0;
};

struct EstimateReport {
    int g = 0, g1 = 0, g0 = 0;
    double pi1_used = 0.0;
    std::string pi1_source;  // manifest | empirical
    double alpha = 0.05;
    std::string strata_mode;  // small_strata | large_strata
    std::vector<EstimandReport> estimands;
    std::vector<OlsMethodReport> ols;
};

EstimateReport analyze_panel(const ExperimentPanel& panel,
                             const std::optional<DesignManifest>& manifest,
                             const AnalysisOptions& opts);

std::string report_to_json(const EstimateReport& r);
std::string report_to_text(const EstimateReport& r);

}  // namespace twostage
