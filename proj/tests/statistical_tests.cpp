// Longer-running distributional checks: test calibration, comparator
// ordering, and p-value uniformity on seeded Monte Carlo draws.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "twostage/assign.hpp"
#include "twostage/estimate.hpp"
#include "twostage/regress.hpp"
#include "twostage/report.hpp"
#include "twostage/rng.hpp"
#include "twostage/simulate.hpp"
#include "twostage/stats.hpp"
#include "twostage/variance.hpp"

using namespace twostage;

namespace {

int failures = 0;

void check(bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!ok) ++failures;
}

// Panel from a simulated population plus an explicit assignment.
ExperimentPanel panel_from(const SimPopulation& pop, double pi2,
                           const std::vector<uint8_t>& treated,
                           const std::vector<uint8_t>& z,
                           const MatchResult* match) {
    ExperimentPanel p;
    p.pi1 = 0.5;
    p.pi2 = pi2;
    for (int gc = 0; gc < pop.g; ++gc) {
        const std::size_t gi = static_cast<std::size_t>(gc);
        ClusterRecord cl;
        cl.cluster_id = "g" + std::to_string(gc);
        cl.n_g = pop.n[gi];
        cl.h = treated[gi] ? pi2 : 0.0;
        cl.c = {pop.c[gi]};
        for (int u = pop.offset[gi]; u < pop.offset[gi + 1]; ++u) {
            const std::size_t ui = static_cast<std::size_t>(u);
            UnitRecord ur;
            ur.unit_id = "u" + std::to_string(u - pop.offset[gi]);
            ur.z = treated[gi] && z[ui] ? 1 : 0;
            ur.sampled = pop.sampled[ui] != 0;
            ur.outcome = !treated[gi] ? pop.y00[ui] : (z[ui] ? pop.y1p[ui] : pop.y0p[ui]);
            cl.units.push_back(std::move(ur));
        }
        p.clusters.push_back(std::move(cl));
    }
    if (match) {
        std::vector<std::string> ids;
        for (const auto& cl : p.clusters) ids.push_back(cl.cluster_id);
        p.tuple_structure = to_tuple_structure(*match, ids, 2, 1);
    }
    return p;
}

void ks_uniformity() {
    SimConfig cfg;
    cfg.dgp.seed = 404;
    cfg.dgp.g = 200;
    const int reps = 500;
    std::vector<double> pvals;
    RepOptions opts;
    for (int rep = 0; rep < reps; ++rep) {
        auto pop = generate_population(cfg.dgp, static_cast<std::uint64_t>(rep));
        auto res = simulate_one(pop, cfg.dgp, {DesignKind::MTC, DesignKind::MTC},
                                Weighting::equal, static_cast<std::uint64_t>(rep),
                                opts);
        pvals.push_back(res.pvalues[0]);  // theta_p1
    }
    std::sort(pvals.begin(), pvals.end());
    double d = 0.0;
    for (std::size_t i = 0; i < pvals.size(); ++i) {
        const double lo = static_cast<double>(i) / reps;
        const double hi = static_cast<double>(i + 1) / reps;
        d = std::max({d, std::abs(pvals[i] - lo), std::abs(pvals[i] - hi)});
    }
    const double crit = 1.358 / std::sqrt(static_cast<double>(reps));
    char buf[160];
    std::snprintf(buf, sizeof(buf), "KS distance %.4f vs %.4f at 5%% (%d p-values)",
                  d, crit, reps);
    check(d < crit, "null p-values uniform under MT-C/MT-C", buf);
}

void cluster_robust_conservative() {
    DgpConfig dgp = resolve_dgp({});
    dgp.seed = 909;
    dgp.g = 100;
    const int reps = 300;
    RunningMeanVar diff;
    for (int rep = 0; rep < reps; ++rep) {
        auto pop = generate_population(dgp, static_cast<std::uint64_t>(rep));
        Philox rng1(dgp.seed, mix_stream(7, static_cast<std::uint64_t>(rep), 0));
        auto mr = match_tuples_with(pop.c, 2, 1, rng1);
        std::vector<uint8_t> z(static_cast<std::size_t>(pop.units()), 0);
        SecondStageDesign sec;
        sec.mechanism = Mechanism::complete;
        sec.pi2 = dgp.pi2;
        for (int gc = 0; gc < pop.g; ++gc) {
            if (!mr.treated[static_cast<std::size_t>(gc)]) continue;
            Philox rng2(dgp.seed, mix_stream(8, static_cast<std::uint64_t>(rep),
                                             static_cast<std::uint64_t>(gc)));
            const int lo = pop.offset[static_cast<std::size_t>(gc)];
            const int hi = pop.offset[static_cast<std::size_t>(gc) + 1];
            std::vector<double> scores(static_cast<std::size_t>(hi - lo), 0.0);
            auto zz = assign_second_stage_scores(scores, sec, rng2);
            for (int u = lo; u < hi; ++u)
                z[static_cast<std::size_t>(u)] =
                    static_cast<uint8_t>(zz[static_cast<std::size_t>(u - lo)]);
        }
        auto panel = panel_from(pop, dgp.pi2, mr.treated, z, &mr);
        auto v2 = v_hat_small_strata(panel, EffectArm::primary, Weighting::size);
        RegressionSpec spec;
        spec.weights = WeightScheme::n_over_m;
        spec.se_type = SeType::cluster;
        auto fit = ols_inference(panel, spec);
        const double vcr = cluster_robust_v(panel, fit, spec);
        diff.add(vcr - v2.v);
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean(Vcr - V2) = %.4f, 2 mc se = %.4f",
                  diff.mean, 2 * diff.se_of_mean());
    check(diff.mean > 2 * diff.se_of_mean(),
          "cluster-robust variance conservative under matched tuples", buf);
}

void power_ordering() {
    SimConfig cfg;
    cfg.dgp.seed = 606;
    cfg.dgp.g = 200;
    cfg.dgp.tau = 0.05;
    cfg.dgp.omega = 0.05;
    cfg.replications = 300;
    cfg.kind = McKind::rejection;
    cfg.estimands = {"theta_p1"};
    cfg.pairs = {{DesignKind::MTC, DesignKind::MTC}, {DesignKind::S2, DesignKind::S2}};
    auto t = run_mc_grid(cfg);
    double mtc = 0, s2 = 0, se_mtc = 0, se_s2 = 0;
    for (const auto& c : t.cells) {
        if (c.first == "MT-C") mtc = c.value, se_mtc = c.mc_se;
        if (c.first == "S-2") s2 = c.value, se_s2 = c.mc_se;
    }
    const double gap = mtc - s2;
    const double se = std::sqrt(se_mtc * se_mtc + se_s2 * se_s2);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "power MT-C %.3f vs S-2 %.3f (2 mc se %.3f)",
                  mtc, s2, 2 * se);
    check(gap > 2 * se, "optimal matched design is more powerful", buf);
}

void heterogeneous_cluster_test_conservative() {
    // Heterogeneous outcome model, matched tuples first stage: the pooled
    // regression with clustered errors must essentially never reject.
    SimConfig cfg;
    cfg.dgp.model = "heterogeneous";
    cfg.dgp.seed = 515;
    cfg.dgp.g = 200;
    cfg.replications = 400;
    cfg.kind = McKind::rejection;
    cfg.analysis = McAnalysis::ols_methods;
    cfg.pairs = {{DesignKind::MTC, DesignKind::C}};
    auto t = run_mc_grid(cfg);
    double cl_p = 1.0, cl_s = 1.0;
    for (const auto& c : t.cells) {
        if (c.estimand == "ols_cluster:primary") cl_p = c.value;
        if (c.estimand == "ols_cluster:spillover") cl_s = c.value;
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "rejections primary %.3f, spillover %.3f", cl_p,
                  cl_s);
    check(cl_p <= 0.01 && cl_s <= 0.01,
          "clustered t-test never over-rejects under matched tuples", buf);
}

void subsampled_calibration() {
    // Half the units sampled per cluster: tests stay near level.
    SimConfig cfg;
    cfg.dgp.seed = 717;
    cfg.dgp.g = 200;
    cfg.dgp.sampling_fraction = 0.5;
    cfg.replications = 400;
    cfg.kind = McKind::rejection;
    cfg.estimands = {"theta_p1", "theta_p2"};
    cfg.pairs = {{DesignKind::MTC, DesignKind::MTC}};
    auto t = run_mc_grid(cfg);
    bool ok = true;
    std::string detail;
    for (const auto& c : t.cells) {
        detail += c.estimand + "=" + std::to_string(c.value).substr(0, 5) + " ";
        ok = ok && c.value >= 0.02 && c.value <= 0.09;
    }
    check(ok, "half-sampled panels keep the tests near level", detail);
}

void household_interval_ordering() {
    Philox rng(2024, 0);
    ExperimentPanel p;
    p.pi1 = 0.5;
    p.pi2 = 0.5;
    const int g = 2400;
    const char* blocks[3] = {"left", "right", "none"};
    const double block_mean[3] = {0.0, 0.5, 1.0};
    std::vector<int> labels;
    std::vector<std::string> label_names;
    for (int i = 0; i < g; ++i) {
        labels.push_back(static_cast<int>(rng.below(3)));
        label_names.push_back(blocks[labels.back()]);
    }
    auto treated = stratified_block_assign(labels, 3, 0.5, 31);
    for (int i = 0; i < g; ++i) {
        const std::size_t gi = static_cast<std::size_t>(i);
        const bool tr = treated[gi] != 0;
        const double b = rng.normal();  // household effect
        const int zu = static_cast<int>(rng.below(2));
        std::vector<UnitRecord> units;
        for (int u = 0; u < 2; ++u) {
            UnitRecord ur;
            ur.unit_id = "m" + std::to_string(u);
            ur.z = tr && u == zu ? 1 : 0;
            const double effect = !tr ? 0.0 : (ur.z ? 2.0 : 1.0);
            ur.outcome = block_mean[labels[gi]] + b + effect + 0.3 * rng.normal();
            units.push_back(std::move(ur));
        }
        ClusterRecord cl;
        cl.cluster_id = "h" + std::to_string(i);
        cl.n_g = 2;
        cl.h = tr ? 0.5 : 0.0;
        cl.s_g = label_names[gi];
        cl.units = std::move(units);
        p.clusters.push_back(std::move(cl));
    }

    AnalysisOptions opts;
    opts.methods = {"adjusted", "ols_robust", "ols_cluster"};
    auto rep = analyze_panel(p, std::nullopt, opts);

    const auto& adj = rep.estimands[1];  // theta_p2
    double rb = 0, rw = 0, cb = 0, cw = 0;
    for (const auto& o : rep.ols) {
        if (o.method == "ols_robust") rb = o.beta1, rw = o.ci1_hi - o.ci1_lo;
        if (o.method == "ols_cluster") cb = o.beta1, cw = o.ci1_hi - o.ci1_lo;
    }
    const double aw = adj.ci_hi - adj.ci_lo;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "points %.4f/%.4f/%.4f, widths robust %.4f < adjusted %.4f < "
                  "cluster %.4f",
                  adj.estimate, rb, cb, rw, aw, cw);
    const bool points_equal =
        std::abs(adj.estimate - rb) < 1e-10 && std::abs(adj.estimate - cb) < 1e-10;
    check(points_equal && rw < aw && aw < cw,
          "household panel: interval ordering robust < adjusted < cluster", buf);

    // Equal sizes: both weightings coincide.
    check(std::abs(rep.estimands[0].estimate - rep.estimands[1].estimate) < 1e-12,
          "household panel: equal sizes collapse weightings", "exact");
}

}  // namespace

int main() {
    ks_uniformity();
    cluster_robust_conservative();
    heterogeneous_cluster_test_conservative();
    power_ordering();
    subsampled_calibration();
    household_interval_ordering();
    std::printf("%s (%d failure%s)\n", failures ? "FAILURE" : "SUCCESS", failures,
                failures == 1 ? "" : "s");
    return failures ? 1 : 0;
}
