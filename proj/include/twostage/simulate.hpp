#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twostage/estimate.hpp"
#include "twostage/variance.hpp"

namespace twostage {

// Design menu used in both stages. S-prefixed designs stratify on fixed or
// empirical quantile cuts of their score; MT-prefixed ones match adjacent
// score order into tuples. S-4O and MT-C score on the stage-one index
// functions (weighting-specific) or the unit-level ratio in stage two.
enum class DesignKind { C, S2, S4, S4O, MTA, MTB, MTC };

DesignKind design_from_string(const std::string& s);
std::string to_string(DesignKind d);
bool is_matched_tuples(DesignKind d);
bool index_depends_on_weighting(DesignKind d);

// Stage-one index functions for the simulated outcome model.
//   equal: c + n/100
//   size:  n * (c + n/100) - (25/3) * n
double optimal_index_first_stage(double c, int n, Weighting weighting);

struct DgpConfig {
    std::string model = "homogeneous";  // homogeneous | heterogeneous
    int g = 200;
    double pi1 = 0.5;
    double pi2 = 0.5;
    double mu00 = 0.0;
    double tau = 0.0;    // primary-only shift
    double omega = 0.0;  // spillover shift
    double gamma = 0.01;
    // Exposure-specific slopes on x1/(x2+0.1) and (c - 1/2); the model
    // preset fills them unless overridden.
    double alpha_00 = 1.0, alpha_0p = 1.0, alpha_1p = 1.0;
    double beta_00 = 1.0, beta_0p = 1.0, beta_1p = 1.0;
    // The noise scales 0.1 (unit covariate shock) and 10 (outcome shock)
    // are read as variances by default; flip to read them as std devs.
    double u_scale = 0.1;
    double eps_scale = 10.0;
    bool noise_as_variance = true;
    double sampling_fraction = 1.0;
    std::uint64_t seed = 0;
};

// Applies the model preset to the slope parameters.
DgpConfig resolve_dgp(DgpConfig cfg);

// One population draw: cluster covariates/sizes plus all three potential
// outcome surfaces per unit, flattened cluster-major.
struct SimPopulation {
    int g = 0;
    std::vector<double> c;
    std::vector<int> n;
    std::vector<int> offset;  // g + 1 entries
    std::vector<double> x1, x2;
    std::vector<double> y00, y0p, y1p;
    std::vector<uint8_t> sampled;

    int units() const { return offset.empty() ? 0 : offset.back(); }
};

SimPopulation generate_population(const DgpConfig& cfg, std::uint64_t replication);

struct TrueEstimands {
    double theta_p1 = 0.0, theta_s1 = 0.0, theta_p2 = 0.0, theta_s2 = 0.0;
};

// Population means from a large auxiliary draw (~1e7 units), cached per
// parameter set.
TrueEstimands true_estimands(const DgpConfig& cfg);

struct DesignPair {
    DesignKind first = DesignKind::C;
    DesignKind second = DesignKind::C;
};

enum class McKind { mse_ratio, rejection };
enum class McAnalysis { adjusted_t, ols_methods };

struct SimConfig {
    DgpConfig dgp;
    std::vector<DesignPair> pairs;
    std::vector<std::string> estimands = {"theta_p1", "theta_p2", "theta_s1",
                                          "theta_s2"};
    int replications = 1000;
    McKind kind = McKind::rejection;
    McAnalysis analysis = McAnalysis::adjusted_t;
    double alpha = 0.05;
    double theta0 = 0.0;
    int threads = 0;  // 0: hardware default, capped by TWOSTAGE_THREADS
};

struct McCell {
    std::string first, second, estimand;
    double value = 0.0;  // rejection rate, or MSE ratio vs the C/C baseline
    double mc_se = 0.0;
    double mse = 0.0;  // raw MSE (mse_ratio tables only)
};

struct McTable {
    McKind kind = McKind::rejection;
    int replications = 0;
    std::vector<McCell> cells;
};

McTable run_mc_grid(const SimConfig& cfg);

// Single-replication outcome on a given population, exposed for the test
// suites that need per-replication estimates rather than aggregated cells.
struct RepOutcome {
    PointEstimates pe;
    // Rejections keyed like estimands (adjusted t) or method:effect (ols).
    std::vector<std::string> test_names;
    std::vector<uint8_t> rejected;
    std::vector<double> pvalues;
    // Filled when requested and the first stage is matched tuples.
    bool has_adjusted = false;
    double theta_p2_adj = 0.0;
    double v2_adj = 0.0;
};

struct RepOptions {
    bool run_tests = true;
    McAnalysis analysis = McAnalysis::adjusted_t;
    double alpha = 0.05;
    double theta0 = 0.0;
    bool with_covariate_adjustment = false;
};

RepOutcome simulate_one(const SimPopulation& pop, const DgpConfig& cfg,
                        DesignPair pair, Weighting weighting_class,
                        std::uint64_t replication, const RepOptions& opts);

// JSON round trip for the CLI.
SimConfig sim_config_from_json(const std::string& text);
std::string mc_table_to_json(const McTable& t);
std::string mc_table_to_csv(const McTable& t);
std::string mc_table_to_text(const McTable& t);

int worker_count(int requested);

}  // namespace twostage
