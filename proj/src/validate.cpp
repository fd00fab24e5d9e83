#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "twostage/types.hpp"

namespace twostage {

namespace {

void add(ValidationReport& r, Violation::Severity sev, std::string code,
         std::string where, std::string msg) {
    if (sev == Violation::Severity::error) r.pass = false;
    r.violations.push_back({sev, std::move(code), std::move(where), std::move(msg)});
}

}  // namespace

ValidationReport validate_panel(const ExperimentPanel& panel,
                                const ValidationOptions& opts) {
    ValidationReport rep;
    const auto err = Violation::Severity::error;
    const auto warn = Violation::Severity::warning;

    if (panel.clusters.size() < 2)
        add(rep, err, "panel_too_small", "",
            "panel has fewer than 2 clusters (G = " +
                std::to_string(panel.clusters.size()) + ")");
    if (!(panel.pi1 > 0.0 && panel.pi1 < 1.0))
        add(rep, err, "pi1_range", "", "pi1 must lie in (0,1)");
    if (!(panel.pi2 > 0.0 && panel.pi2 <= 1.0))
        add(rep, err, "pi2_range", "", "pi2 must lie in (0,1]");

    std::set<std::string> ids;
    int g1 = 0, g0 = 0;
    for (const auto& cl : panel.clusters) {
        if (!ids.insert(cl.cluster_id).second)
            add(rep, err, "duplicate_cluster_id", cl.cluster_id,
                "cluster id appears more than once");

        const bool treated = cl.treated(panel.pi2);
        const bool control = std::abs(cl.h) < 1e-9;
        if (treated)
            ++g1;
        else if (control)
            ++g0;
        else
            add(rep, err, "h_not_binary", cl.cluster_id,
                "treated fraction h = " + std::to_string(cl.h) +
                    " is neither 0 nor pi2 = " + std::to_string(panel.pi2));

        const int m = cl.sampled_count();
        if (m < 2)
            add(rep, err, "sampled_units_floor", cl.cluster_id,
                "only " + std::to_string(m) +
                    " sampled unit(s); at least 2 are required per cluster");
        if (static_cast<int>(cl.units.size()) > cl.n_g)
            add(rep, err, "units_exceed_n", cl.cluster_id,
                "unit rows (" + std::to_string(cl.units.size()) +
                    ") exceed cluster size n_g = " + std::to_string(cl.n_g));

        long long z_sum = 0;
        for (const auto& u : cl.units) {
            z_sum += u.z;
            if (u.z != 0 && u.z != 1)
                add(rep, err, "z_not_binary", cl.cluster_id,
                    "unit " + u.unit_id + " has z = " + std::to_string(u.z));
            if (u.z == 1 && !treated)
                add(rep, err, "treated_unit_in_control_cluster", cl.cluster_id,
                    "unit " + u.unit_id + " is treated but the cluster has h = 0");
        }
        if (treated && static_cast<int>(cl.units.size()) == cl.n_g) {
            // Full roster present: the within-cluster count is checkable.
            long long want = treated_count_target(panel.pi2, cl.n_g, opts.rounding);
            if (z_sum != want)
                add(rep, err, "within_cluster_count", cl.cluster_id,
                    "treated units = " + std::to_string(z_sum) + ", expected " +
                        std::to_string(want) + " of n_g = " + std::to_string(cl.n_g));
        }
    }
    if (g1 == 0)
        add(rep, err, "no_treated_clusters", "", "no cluster has h = pi2");
    if (g0 == 0)
        add(rep, err, "no_control_clusters", "", "no cluster has h = 0");

    if (panel.tuple_structure &&
        panel.tuple_structure->mode == StrataMode::small_strata) {
        const auto& ts = *panel.tuple_structure;
        if (ts.k < 2 || ts.l < 1 || ts.l >= ts.k)
            add(rep, err, "tuple_kl_range", "",
                "tuple sizes must satisfy k >= 2 and 0 < l < k (k = " +
                    std::to_string(ts.k) + ", l = " + std::to_string(ts.l) + ")");
        else if (std::gcd(ts.k, ts.l) != 1)
            add(rep, warn, "kl_not_coprime", "",
                "l = " + std::to_string(ts.l) + " and k = " + std::to_string(ts.k) +
                    " share a factor; analysis proceeds but the design is reducible");

        std::set<std::string> seen;
        std::size_t covered = 0;
        for (std::size_t j = 0; j < ts.tuples.size(); ++j) {
            const auto& tup = ts.tuples[j];
            const std::string label = "tuple " + std::to_string(j);
            if (static_cast<int>(tup.size()) != ts.k)
                add(rep, err, "tuple_size", label,
                    "has " + std::to_string(tup.size()) + " clusters, expected k = " +
                        std::to_string(ts.k));
            int treated_in_tuple = 0;
            for (const auto& id : tup) {
                if (!seen.insert(id).second)
                    add(rep, err, "tuple_overlap", label,
                        "cluster " + id + " appears in more than one tuple");
                auto it = std::find_if(
                    panel.clusters.begin(), panel.clusters.end(),
                    [&](const ClusterRecord& c) { return c.cluster_id == id; });
                if (it == panel.clusters.end()) {
                    add(rep, err, "tuple_unknown_cluster", label,
                        "cluster " + id + " is not in the panel");
                } else {
                    ++covered;
                    treated_in_tuple += it->treated(panel.pi2) ? 1 : 0;
                }
            }
            if (treated_in_tuple != ts.l)
                add(rep, err, "tuple_treated_count", label,
                    "tuple treated count " + std::to_string(treated_in_tuple) +
                        " != l = " + std::to_string(ts.l));
        }
        if (ts.tuples.empty())
            add(rep, err, "tuple_partition", "",
                "small-strata mode but no tuples are given");
        else if (seen.size() != panel.clusters.size() ||
                 covered != panel.clusters.size())
            add(rep, err, "tuple_partition", "",
                "tuples cover " + std::to_string(covered) + " of " +
                    std::to_string(panel.clusters.size()) + " clusters");
    }

    return rep;
}

}  // namespace twostage
