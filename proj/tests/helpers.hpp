#pragma once

#include <string>
#include <vector>

#include "twostage/rng.hpp"
#include "twostage/types.hpp"

namespace testutil {

using namespace twostage;

inline UnitRecord unit(const std::string& id, double y, int z,
                       std::vector<double> x = {}) {
    UnitRecord u;
    u.unit_id = id;
    u.outcome = y;
    u.z = z;
    u.x = std::move(x);
    return u;
}

inline ClusterRecord cluster(const std::string& id, int n, double h,
                             std::vector<UnitRecord> units,
                             std::vector<double> c = {}, std::string s = "") {
    ClusterRecord cl;
    cl.cluster_id = id;
    cl.n_g = n;
    cl.h = h;
    cl.units = std::move(units);
    cl.c = std::move(c);
    cl.s_g = std::move(s);
    return cl;
}

// Four clusters of two units, matched into pairs (c1,c2) and (c3,c4) with
// one treated cluster per pair. Cluster-level averages:
//   treated arm means  ybar1 = 3 (c1) and 5 (c3)
//   control clusters   ybar  = 1 (c2) and 2 (c4)
//   treated clusters' control-unit means = 1 (c1) and 3 (c3)
inline ExperimentPanel worked_panel() {
    ExperimentPanel p;
    p.pi1 = 0.5;
    p.pi2 = 0.5;
    p.clusters.push_back(cluster("c1", 2, 0.5, {unit("u1", 3, 1), unit("u2", 1, 0)}));
    p.clusters.push_back(cluster("c2", 2, 0.0, {unit("u1", 1, 0), unit("u2", 1, 0)}));
    p.clusters.push_back(cluster("c3", 2, 0.5, {unit("u1", 5, 1), unit("u2", 3, 0)}));
    p.clusters.push_back(cluster("c4", 2, 0.0, {unit("u1", 2, 0), unit("u2", 2, 0)}));
    TupleStructure ts;
    ts.k = 2;
    ts.l = 1;
    ts.mode = StrataMode::small_strata;
    ts.tuples = {{"c1", "c2"}, {"c3", "c4"}};
    ts.tuple_scores = {0.0, 1.0};
    p.tuple_structure = ts;
    return p;
}

// Random panel whose treated clusters hold an exactly pi2 = 1/2 treated
// share among sampled units (the regime where the estimator/WLS identities
// are exact); cluster sizes and sampling fractions vary.
inline ExperimentPanel random_exact_fraction_panel(std::uint64_t seed) {
    Philox rng(seed, 99);
    ExperimentPanel p;
    p.pi1 = 0.5;
    p.pi2 = 0.5;
    const int g = 4 + 2 * static_cast<int>(rng.below(9));  // 4..20 even
    for (int i = 0; i < g; ++i) {
        const bool treated = i % 2 == 0;  // both arms populated
        const int n = 2 + static_cast<int>(rng.below(11));  // 2..12
        int m = 2 * (1 + static_cast<int>(rng.below(
                             static_cast<std::uint64_t>(n / 2))));  // even, <= n
        ClusterRecord cl;
        cl.cluster_id = "g" + std::to_string(i);
        cl.n_g = n;
        cl.h = treated ? p.pi2 : 0.0;
        const double base = rng.normal();
        for (int u = 0; u < m; ++u) {
            UnitRecord ur;
            ur.unit_id = "u" + std::to_string(u);
            ur.z = treated && u < m / 2 ? 1 : 0;
            ur.outcome = base + rng.normal() + (ur.z ? 0.7 : 0.0);
            cl.units.push_back(ur);
        }
        p.clusters.push_back(std::move(cl));
    }
    return p;
}

}  // namespace testutil
