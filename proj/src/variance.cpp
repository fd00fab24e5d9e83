#include "twostage/variance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "twostage/assign.hpp"
#include "twostage/errors.hpp"
#include "twostage/stats.hpp"

namespace twostage {

std::string to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::v1: return "v1";
        case EstimatorKind::v2: return "v2";
        case EstimatorKind::v3: return "v3";
        case EstimatorKind::v4: return "v4";
        case EstimatorKind::vcr: return "vcr";
        case EstimatorKind::v2_adj: return "v2_adj";
    }
    return "?";
}

SmallStrataParts small_strata_components(const std::vector<double>& y,
                                         const std::vector<uint8_t>& treated,
                                         const std::vector<std::vector<int>>& tuples,
                                         int k, int l,
                                         const std::vector<double>* tuple_scores) {
    const std::size_t n = tuples.size();
    if (n < 2)
        throw Error(ErrorCategory::validation,
                    "small-strata variance needs at least 2 tuples (n = " +
                        std::to_string(n) + ")");
    const double pi1 = static_cast<double>(l) / k;
    const double kt = l;      // clusters per tuple in the treated arm
    const double kc = k - l;  // and in the control arm

    // Pair tuples in matching-score order when scores are known.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (tuple_scores) {
        if (tuple_scores->size() != n)
            throw Error(ErrorCategory::config, "tuple_scores size mismatch");
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return (*tuple_scores)[static_cast<std::size_t>(a)] <
                   (*tuple_scores)[static_cast<std::size_t>(b)];
        });
    }

    // Per-tuple arm sums.
    std::vector<double> st(n, 0.0), sc(n, 0.0);
    double sum_t = 0.0, sum_c = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& tup = tuples[static_cast<std::size_t>(order[j])];
        int seen_t = 0;
        for (int idx : tup) {
            const double v = y[static_cast<std::size_t>(idx)];
            if (!std::isfinite(v))
                throw Error(ErrorCategory::validation,
                            "cluster-level outcome is undefined (empty arm?)");
            if (treated[static_cast<std::size_t>(idx)]) {
                st[j] += v;
                ++seen_t;
            } else {
                sc[j] += v;
            }
        }
        if (seen_t != l)
            throw Error(ErrorCategory::validation,
                        "tuple treated count " + std::to_string(seen_t) +
                            " != l = " + std::to_string(l));
        sum_t += st[j];
        sum_c += sc[j];
    }

    SmallStrataParts parts;
    const double dn = static_cast<double>(n);
    parts.gamma1 = sum_t / (dn * kt);
    parts.gamma0 = sum_c / (dn * kc);

    for (std::size_t j = 0; j < n; ++j) {
        const auto& tup = tuples[static_cast<std::size_t>(order[j])];
        for (int idx : tup) {
            const double v = y[static_cast<std::size_t>(idx)];
            if (treated[static_cast<std::size_t>(idx)])
                parts.sigma2_1 += (v - parts.gamma1) * (v - parts.gamma1);
            else
                parts.sigma2_0 += (v - parts.gamma0) * (v - parts.gamma0);
        }
        parts.rho_tc += (st[j] / (kt * kc)) * sc[j];
    }
    parts.sigma2_1 /= dn * kt;
    parts.sigma2_0 /= dn * kc;
    parts.rho_tc /= dn;

    // Consecutive-tuple products; an odd trailing tuple is dropped here
    // (and only here).
    const std::size_t half = n / 2;
    parts.dropped_last_tuple = (n % 2) != 0;
    for (std::size_t j = 0; j < half; ++j) {
        parts.rho_tt += (st[2 * j] / (kt * kt)) * st[2 * j + 1];
        parts.rho_cc += (sc[2 * j] / (kc * kc)) * sc[2 * j + 1];
    }
    parts.rho_tt *= 2.0 / dn;
    parts.rho_cc *= 2.0 / dn;

    const double v1_t = parts.sigma2_1 - (parts.rho_tt - parts.gamma1 * parts.gamma1);
    const double v1_c = parts.sigma2_0 - (parts.rho_cc - parts.gamma0 * parts.gamma0);
    const double v2_tt = parts.rho_tt - parts.gamma1 * parts.gamma1;
    const double v2_cc = parts.rho_cc - parts.gamma0 * parts.gamma0;
    const double v2_tc = parts.rho_tc - parts.gamma1 * parts.gamma0;
    parts.v = v1_t / pi1 + v1_c / (1.0 - pi1) + v2_tt + v2_cc - 2.0 * v2_tc;
    return parts;
}

namespace {

VarianceEstimate finish(double v, EstimatorKind kind, EffectArm arm, std::size_t g,
                        std::vector<std::string> notes) {
    VarianceEstimate est;
    est.kind = kind;
    est.arm = arm;
    est.notes = std::move(notes);
    est.floored = v < kVarianceFloor;
    est.v = est.floored ? kVarianceFloor : v;
    est.se = std::sqrt(est.v / static_cast<double>(g));
    return est;
}

// Outcome values entering the estimator for the requested arm/weighting.
std::vector<double> arm_values(const std::vector<ClusterAverages>& av, EffectArm arm,
                               Weighting weighting) {
    std::vector<double> y(av.size());
    if (weighting == Weighting::equal) {
        for (std::size_t i = 0; i < av.size(); ++i)
            y[i] = arm == EffectArm::primary ? av[i].ybar1 : av[i].ybar0;
    } else {
        auto adj = adjusted_outcomes(av);
        for (std::size_t i = 0; i < av.size(); ++i)
            y[i] = arm == EffectArm::primary ? adj[i].ytilde1 : adj[i].ytilde0;
    }
    return y;
}

std::vector<uint8_t> treated_flags(const std::vector<ClusterAverages>& av) {
    std::vector<uint8_t> t(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) t[i] = av[i].treated ? 1 : 0;
    return t;
}

}  // namespace

VarianceEstimate v_hat_small_strata(const std::vector<ClusterAverages>& av,
                                    const std::vector<std::vector<int>>& tuples,
                                    int k, int l, EffectArm arm, Weighting weighting,
                                    const std::vector<double>* tuple_scores) {
    auto y = arm_values(av, arm, weighting);
    auto parts = small_strata_components(y, treated_flags(av), tuples, k, l,
                                         tuple_scores);
    std::vector<std::string> notes;
    if (parts.dropped_last_tuple)
        notes.push_back("odd tuple count: last tuple unused by the paired products");
    return finish(parts.v,
                  weighting == Weighting::equal ? EstimatorKind::v1 : EstimatorKind::v2,
                  arm, av.size(), std::move(notes));
}

VarianceEstimate v_hat_small_strata(const ExperimentPanel& panel, EffectArm arm,
                                    Weighting weighting) {
    auto tuples = tuples_as_indices(panel);
    const auto& ts = *panel.tuple_structure;
    const std::vector<double>* scores =
        ts.tuple_scores.size() == ts.tuples.size() && !ts.tuple_scores.empty()
            ? &ts.tuple_scores
            : nullptr;
    return v_hat_small_strata(cluster_averages(panel), tuples, ts.k, ts.l, arm,
                              weighting, scores);
}

VarianceEstimate v_hat_large_strata(const std::vector<ClusterAverages>& av,
                                    const std::vector<int>& stratum, int n_strata,
                                    EffectArm arm, Weighting weighting, double pi1,
                                    const std::vector<double>& tau) {
    if (stratum.size() != av.size())
        throw Error(ErrorCategory::config, "stratum labels size mismatch");
    if (static_cast<int>(tau.size()) != n_strata)
        throw Error(ErrorCategory::config, "tau must have one entry per stratum");
    if (!(pi1 > 0.0 && pi1 < 1.0))
        throw Error(ErrorCategory::config, "pi1 must lie in (0,1)");
    const double tau_max = pi1 * (1.0 - pi1) + 1e-12;
    for (double t : tau)
        if (t < -1e-12 || t > tau_max)
            throw Error(ErrorCategory::config,
                        "tau out of [0, pi1*(1-pi1)]: " + std::to_string(t));

    auto y = arm_values(av, arm, weighting);
    const std::size_t g = av.size();

    std::vector<double> sum1(static_cast<std::size_t>(n_strata), 0.0);
    std::vector<double> sum0(static_cast<std::size_t>(n_strata), 0.0);
    std::vector<int> cnt1(static_cast<std::size_t>(n_strata), 0);
    std::vector<int> cnt0(static_cast<std::size_t>(n_strata), 0);
    double sq1 = 0.0, sq0 = 0.0, tot1 = 0.0, tot0 = 0.0;
    int g1 = 0, g0 = 0;
    for (std::size_t i = 0; i < g; ++i) {
        const int s = stratum[i];
        if (s < 0 || s >= n_strata)
            throw Error(ErrorCategory::validation, "stratum label out of range");
        if (!std::isfinite(y[i]))
            throw Error(ErrorCategory::validation,
                        "cluster-level outcome is undefined (empty arm?)");
        if (av[i].treated) {
            sum1[static_cast<std::size_t>(s)] += y[i];
            ++cnt1[static_cast<std::size_t>(s)];
            sq1 += y[i] * y[i];
            tot1 += y[i];
            ++g1;
        } else {
            sum0[static_cast<std::size_t>(s)] += y[i];
            ++cnt0[static_cast<std::size_t>(s)];
            sq0 += y[i] * y[i];
            tot0 += y[i];
            ++g0;
        }
    }

    std::string missing;
    for (int s = 0; s < n_strata; ++s) {
        if (cnt1[static_cast<std::size_t>(s)] < 2 || cnt0[static_cast<std::size_t>(s)] < 2)
            missing += (missing.empty() ? "" : ", ") + std::to_string(s);
    }
    if (!missing.empty())
        throw Error(ErrorCategory::validation,
                    "strata with fewer than 2 clusters in an arm: " + missing);

    const double ybar1 = tot1 / g1;
    const double ybar0 = tot0 / g0;

    double within1 = sq1 / g1;   // becomes E[y^2 | treated] - sum shares mu^2
    double within0 = sq0 / g0;
    double between = 0.0, tau_term = 0.0;
    for (int s = 0; s < n_strata; ++s) {
        const std::size_t si = static_cast<std::size_t>(s);
        const double share =
            static_cast<double>(cnt1[si] + cnt0[si]) / static_cast<double>(g);
        const double mu1 = sum1[si] / cnt1[si];
        const double mu0 = sum0[si] / cnt0[si];
        within1 -= share * mu1 * mu1;
        within0 -= share * mu0 * mu0;
        double d1 = mu1, d0 = mu0;
        if (weighting == Weighting::equal) {
            // The size-weighted outcomes are already centered arm-wise.
            d1 -= ybar1;
            d0 -= ybar0;
        }
        between += share * (d1 - d0) * (d1 - d0);
        tau_term += tau[si] * share * (d1 / pi1 + d0 / (1.0 - pi1)) *
                    (d1 / pi1 + d0 / (1.0 - pi1));
    }

    const double v = within1 / pi1 + within0 / (1.0 - pi1) + between + tau_term;
    return finish(v,
                  weighting == Weighting::equal ? EstimatorKind::v3 : EstimatorKind::v4,
                  arm, g, {});
}

VarianceEstimate v_hat_large_strata(const ExperimentPanel& panel, EffectArm arm,
                                    Weighting weighting, double pi1, double tau_all) {
    std::vector<std::string> labels;
    labels.reserve(panel.clusters.size());
    for (const auto& cl : panel.clusters) labels.push_back(cl.s_g);
    std::vector<int> dense;
    int ns = densify_labels(labels, dense);
    return v_hat_large_strata(cluster_averages(panel), dense, ns, arm, weighting, pi1,
                              std::vector<double>(static_cast<std::size_t>(ns), tau_all));
}

TestResult adjusted_t_test(double theta_hat, const VarianceEstimate& v, int g,
                           double theta0, double alpha) {
    if (!(v.v > 0.0))
        throw Error(ErrorCategory::numeric, "variance estimate is not positive");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw Error(ErrorCategory::config, "alpha must lie in (0,1)");
    TestResult r;
    r.theta0 = theta0;
    const double se = std::sqrt(v.v / static_cast<double>(g));
    r.tstat = (theta_hat - theta0) / se;
    r.pvalue = 2.0 * (1.0 - normal_cdf(std::abs(r.tstat)));
    const double crit = normal_quantile(1.0 - alpha / 2.0);
    r.reject = std::abs(r.tstat) > crit;
    r.ci_lo = theta_hat - crit * se;
    r.ci_hi = theta_hat + crit * se;
    return r;
}

VarianceEstimate covariate_adjusted_variance(const std::vector<ClusterAverages>& av,
                                             const std::vector<std::vector<int>>& tuples,
                                             int k, int l,
                                             const std::vector<std::vector<double>>& psi,
                                             const std::vector<double>& beta,
                                             const std::vector<double>* tuple_scores) {
    const std::size_t g = av.size();
    const std::size_t p = beta.size();
    if (psi.size() != g)
        throw Error(ErrorCategory::config, "psi must have one vector per cluster");

    double nbar = 0.0;
    for (const auto& a : av) nbar += a.n;
    nbar /= static_cast<double>(g);

    std::vector<double> psibar(p, 0.0);
    for (const auto& v : psi)
        for (std::size_t c = 0; c < p; ++c) psibar[c] += v[c];
    for (auto& v : psibar) v /= static_cast<double>(g);

    auto adj = adjusted_outcomes(av);
    std::vector<double> y(g);
    for (std::size_t i = 0; i < g; ++i) {
        double shift = 0.0;
        for (std::size_t c = 0; c < p; ++c)
            shift += (psi[i][c] - psibar[c]) * beta[c];
        y[i] = adj[i].ytilde1 - shift / nbar;
    }

    auto parts = small_strata_components(y, treated_flags(av), tuples, k, l,
                                         tuple_scores);
    std::vector<std::string> notes;
    if (parts.dropped_last_tuple)
        notes.push_back("odd tuple count: last tuple unused by the paired products");
    return finish(parts.v, EstimatorKind::v2_adj, EffectArm::primary, g,
                  std::move(notes));
}

}  // namespace twostage
