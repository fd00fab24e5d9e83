#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace twostage {

// One observed unit. `sampled` marks membership in the analysis subset;
// rows for unsampled units may be present (assignment covers the whole
// cluster, analysis only the sampled part).
struct UnitRecord {
    std::string unit_id;
    double outcome = 0.0;
    int z = 0;  // own treatment indicator
    std::vector<double> x;
    bool sampled = true;
    std::string second_stage_stratum;  // empty when unused
};

// Cluster-level rounding for within-cluster treated counts.
enum class Rounding { floor, ceiling };

inline long long treated_count_target(double pi2, long long n, Rounding r) {
    double t = pi2 * static_cast<double>(n);
    if (r == Rounding::floor) return static_cast<long long>(std::floor(t + 1e-9));
    return static_cast<long long>(std::ceil(t - 1e-9));
}

struct ClusterRecord {
    std::string cluster_id;
    int n_g = 0;  // true cluster size; may exceed the number of unit rows
    std::vector<UnitRecord> units;
    double h = 0.0;  // treated fraction: pi2 for treated clusters, 0 otherwise
    std::vector<double> c;
    std::string s_g;  // stratum / tuple label (empty when unused)

    int sampled_count() const {
        int m = 0;
        for (const auto& u : units) m += u.sampled ? 1 : 0;
        return m;
    }
    bool treated(double pi2) const { return std::abs(h - pi2) < 1e-9 && h > 0.0; }
};

enum class StrataMode { small_strata, large_strata, complete };

// Partition of clusters into strata. For small strata (matched tuples) the
// tuples are explicit id sets of size k with l treated each; for large
// strata only the label map matters.
struct TupleStructure {
    std::vector<std::vector<std::string>> tuples;
    int k = 2;
    int l = 1;
    // Mean first-stage matching score per tuple, when known. Used to order
    // tuples before pairing in the variance estimator; absent for panels
    // whose tuples arrived without scores.
    std::vector<double> tuple_scores;
    std::map<std::string, std::string> large_strata;
    StrataMode mode = StrataMode::small_strata;
};

struct ExperimentPanel {
    std::vector<ClusterRecord> clusters;
    double pi1 = 0.5;
    double pi2 = 0.5;
    std::optional<TupleStructure> tuple_structure;
};

struct Violation {
    enum class Severity { error, warning };
    Severity severity = Severity::error;
    std::string code;
    std::string where;  // cluster / tuple id, empty for panel-level issues
    std::string message;
};

struct ValidationReport {
    bool pass = true;  // no error-severity violations
    std::vector<Violation> violations;
};

struct ValidationOptions {
    Rounding rounding = Rounding::floor;
};

// Structural checks for the panel invariants: unique ids, both arms
// populated, sampled-unit floor, within-cluster treated counts, tuple
// partition and per-tuple treated counts. Violations are data, not faults.
ValidationReport validate_panel(const ExperimentPanel& panel,
                                const ValidationOptions& opts = {});

}  // namespace twostage
