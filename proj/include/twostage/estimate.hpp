#pragma once

#include <vector>

#include "twostage/types.hpp"

namespace twostage {

// Per-cluster first-level averages. For a treated cluster ybar1/ybar0 are
// the treated-/control-arm means over sampled units; for a control cluster
// both equal the overall sampled mean. Empty arms are NaN and counted.
struct ClusterAverages {
    double ybar1 = 0.0;
    double ybar0 = 0.0;
    int m1 = 0;
    int m0 = 0;
    int m = 0;
    int n = 0;
    double h = 0.0;
    bool treated = false;
};

std::vector<ClusterAverages> cluster_averages(const ExperimentPanel& panel);

struct EstimateOptions {
    // Treated clusters without sampled control units break the spillover
    // contrast; by default that is an error, with the flag they are
    // dropped from the spillover averages only.
    bool allow_missing_control_arm = false;
};

struct PointEstimates {
    double theta_p1 = 0.0;
    double theta_s1 = 0.0;
    double theta_p2 = 0.0;
    double theta_s2 = 0.0;
    int g1 = 0;
    int g0 = 0;
    double n1 = 0.0;
    double n0 = 0.0;
};

PointEstimates point_estimates(const std::vector<ClusterAverages>& av,
                               const EstimateOptions& opts = {});
PointEstimates point_estimates(const ExperimentPanel& panel,
                               const EstimateOptions& opts = {});

// Size-weighted demeaned outcomes: ytilde^z = (n_g / nbar) *
// (ybar^z - own-arm mean of (ybar^z * n) / nbar), nbar the grand mean size.
struct AdjustedAverages {
    double ytilde1 = 0.0;
    double ytilde0 = 0.0;
};

std::vector<AdjustedAverages> adjusted_outcomes(const std::vector<ClusterAverages>& av);
std::vector<AdjustedAverages> adjusted_outcomes(const ExperimentPanel& panel);

// Linear covariate adjustment of the size-weighted primary estimator.
// beta is the least-squares slope of the tuple-level treated-minus-control
// outcome contrast on the matching psi contrast; the adjusted estimator
// subtracts (psi_g - mean psi)' beta from n_g * ybar1 on both arms.
struct CovariateAdjustment {
    std::vector<double> beta;
    double theta_p2_adj = 0.0;
};

CovariateAdjustment covariate_adjusted_estimate(
    const std::vector<ClusterAverages>& av,
    const std::vector<std::vector<double>>& psi,
    const std::vector<std::vector<int>>& tuples, int k, int l);

CovariateAdjustment covariate_adjusted_estimate(
    const ExperimentPanel& panel, const std::vector<std::vector<double>>& psi);

// Built-in psi helpers.
std::vector<std::vector<double>> psi_cluster_mean_x(const ExperimentPanel& panel,
                                                    std::size_t x_col);
std::vector<std::vector<double>> psi_ng_power(const ExperimentPanel& panel, int power);

// Tuple id-sets resolved to cluster indices in panel order.
std::vector<std::vector<int>> tuples_as_indices(const ExperimentPanel& panel);

}  // namespace twostage
