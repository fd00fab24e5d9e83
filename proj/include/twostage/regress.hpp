#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "twostage/types.hpp"

namespace twostage {

enum class WeightScheme { unweighted, inv_m, n_over_m };

// `cluster` is the plain per-cluster aggregate sandwich (the form the
// estimator identities are stated in); `hc2_cluster` applies the
// (I - H_gg)^{-1/2} leverage adjustment per cluster, which some software
// labels simply "cluster-robust". The two differ in finite samples only.
enum class SeType { hc_robust, cluster, hc2_cluster };

WeightScheme weight_scheme_from_string(const std::string& s);

struct RegressionSpec {
    WeightScheme weights = WeightScheme::unweighted;
    bool fixed_effects = false;  // stratum / tuple dummies
    SeType se_type = SeType::hc_robust;
    bool hc1 = false;  // small-sample factor n/(n-k) on the hc meat
};

// Flat per-observation view of the sampled units; shared by the panel
// wrapper and the simulation harness.
struct RegressionData {
    std::vector<double> y;
    std::vector<uint8_t> z;  // own treatment
    std::vector<uint8_t> l;  // untreated unit in a treated cluster
    std::vector<double> w;   // observation weight
    std::vector<int> cluster;
    std::vector<int> stratum;  // dense labels; required for fixed effects
    int n_clusters = 0;
    int n_strata = 0;
};

struct RegressionFit {
    double alpha = 0.0;  // NaN when the intercept is absorbed
    double beta1 = 0.0;
    double beta2 = 0.0;
    double se_beta1 = 0.0;
    double se_beta2 = 0.0;
    Eigen::MatrixXd vcov;  // Var(coef); order alpha, beta1, beta2[, dummies]
    std::vector<std::string> coef_names;
    int n_obs = 0;
    bool fe_absorbed = false;
};

// Weighted least squares of y on (1, z, l) with optional stratum fixed
// effects (explicit dummies up to 50 strata, within-transformation above)
// and the requested sandwich standard errors.
RegressionFit ols_inference(const RegressionData& data, const RegressionSpec& spec);
RegressionFit ols_inference(const ExperimentPanel& panel, const RegressionSpec& spec);

RegressionData regression_data(const ExperimentPanel& panel, WeightScheme weights,
                               bool need_strata);

// Direct evaluation of the cluster-robust variance of the primary-effect
// slope under n_over_m weights: each cluster contributes the square of its
// arm-specific weighted residual aggregate; the result is on the
// asymptotic scale Var(sqrt(G) * beta1).
double cluster_robust_v(const RegressionData& data, const RegressionFit& fit);
double cluster_robust_v(const ExperimentPanel& panel, const RegressionFit& fit,
                        const RegressionSpec& spec);

}  // namespace twostage
