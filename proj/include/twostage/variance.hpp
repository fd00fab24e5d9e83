#pragma once

#include <string>
#include <vector>

#include "twostage/estimate.hpp"
#include "twostage/types.hpp"

namespace twostage {

enum class EstimatorKind { v1, v2, v3, v4, vcr, v2_adj };
enum class EffectArm { primary, spillover };
enum class Weighting { equal, size };

std::string to_string(EstimatorKind k);

// Scale convention: `v` estimates the variance of sqrt(G) * (estimate -
// estimand); the reported standard error is sqrt(v / G).
struct VarianceEstimate {
    double v = 0.0;
    double se = 0.0;
    EstimatorKind kind = EstimatorKind::v1;
    EffectArm arm = EffectArm::primary;
    bool floored = false;
    std::vector<std::string> notes;
};

// Raw small-strata components, exposed for verification: gamma[a] and
// sigma2[a] are the per-arm grand means and spreads of the cluster-level
// outcomes (a = 1 treated arm, a = 0 control arm), rho_tt / rho_cc are the
// consecutive-tuple cross products estimating squared conditional means,
// rho_tc the within-tuple cross-arm product.
struct SmallStrataParts {
    double gamma1 = 0.0, gamma0 = 0.0;
    double sigma2_1 = 0.0, sigma2_0 = 0.0;
    double rho_tt = 0.0, rho_cc = 0.0, rho_tc = 0.0;
    double v = 0.0;
    bool dropped_last_tuple = false;
};

// Kernel over per-cluster outcome values (already arm-resolved). Tuples are
// re-ordered by tuple_scores when given so that paired tuples are adjacent
// in the matching score.
SmallStrataParts small_strata_components(const std::vector<double>& y,
                                         const std::vector<uint8_t>& treated,
                                         const std::vector<std::vector<int>>& tuples,
                                         int k, int l,
                                         const std::vector<double>* tuple_scores);

VarianceEstimate v_hat_small_strata(const std::vector<ClusterAverages>& av,
                                    const std::vector<std::vector<int>>& tuples,
                                    int k, int l, EffectArm arm, Weighting weighting,
                                    const std::vector<double>* tuple_scores = nullptr);
VarianceEstimate v_hat_small_strata(const ExperimentPanel& panel, EffectArm arm,
                                    Weighting weighting);

// Large-strata estimator; tau holds one entry per stratum, each within
// [0, pi1*(1-pi1)] (0 for block-balanced designs, the upper bound for
// Bernoulli-style assignment).
VarianceEstimate v_hat_large_strata(const std::vector<ClusterAverages>& av,
                                    const std::vector<int>& stratum, int n_strata,
                                    EffectArm arm, Weighting weighting, double pi1,
                                    const std::vector<double>& tau);
VarianceEstimate v_hat_large_strata(const ExperimentPanel& panel, EffectArm arm,
                                    Weighting weighting, double pi1, double tau_all);

struct TestResult {
    double theta0 = 0.0;
    double tstat = 0.0;
    double pvalue = 1.0;
    bool reject = false;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

// Normal-critical-value test of theta = theta0 with the given variance
// estimate: t = sqrt(g) * (theta_hat - theta0) / sqrt(v).
TestResult adjusted_t_test(double theta_hat, const VarianceEstimate& v, int g,
                           double theta0, double alpha);

// Small-strata variance for the covariate-adjusted size-weighted primary
// estimator: the size-weighted outcome is shifted by the fitted psi term
// before the kernel runs.
VarianceEstimate covariate_adjusted_variance(const std::vector<ClusterAverages>& av,
                                             const std::vector<std::vector<int>>& tuples,
                                             int k, int l,
                                             const std::vector<std::vector<double>>& psi,
                                             const std::vector<double>& beta,
                                             const std::vector<double>* tuple_scores = nullptr);

// Negative raw estimates are floored here.
constexpr double kVarianceFloor = 1e-12;

}  // namespace twostage
