#include "twostage/estimate.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>

#include "twostage/errors.hpp"

namespace twostage {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::vector<ClusterAverages> cluster_averages(const ExperimentPanel& panel) {
    std::vector<ClusterAverages> out;
    out.reserve(panel.clusters.size());
    for (const auto& cl : panel.clusters) {
        ClusterAverages a;
        a.n = cl.n_g;
        a.h = cl.h;
        a.treated = cl.treated(panel.pi2);
        double s1 = 0.0, s0 = 0.0, s = 0.0;
        for (const auto& u : cl.units) {
            if (!u.sampled) continue;
            ++a.m;
            s += u.outcome;
            if (u.z == 1) {
                ++a.m1;
                s1 += u.outcome;
            } else {
                ++a.m0;
                s0 += u.outcome;
            }
        }
        if (a.m == 0)
            throw Error(ErrorCategory::validation,
                        "cluster " + cl.cluster_id + " has no sampled units");
        if (a.treated) {
            a.ybar1 = a.m1 > 0 ? s1 / a.m1 : kNaN;
            a.ybar0 = a.m0 > 0 ? s0 / a.m0 : kNaN;
        } else {
            a.ybar1 = a.ybar0 = s / a.m;
        }
        out.push_back(a);
    }
    return out;
}

PointEstimates point_estimates(const std::vector<ClusterAverages>& av,
                               const EstimateOptions& opts) {
    PointEstimates pe;
    double t1 = 0.0, c1 = 0.0;           // sums of ybar1 by arm
    double t1n = 0.0, c1n = 0.0;         // n-weighted
    double t0 = 0.0, t0n = 0.0;          // spillover treated-arm sums
    int g1s = 0;                         // treated clusters usable for spillover
    double n1s = 0.0;
    for (const auto& a : av) {
        if (a.treated) {
            if (a.m1 == 0)
                throw Error(ErrorCategory::validation,
                            "treated cluster with no sampled treated units");
            ++pe.g1;
            pe.n1 += a.n;
            t1 += a.ybar1;
            t1n += a.n * a.ybar1;
            if (a.m0 == 0) {
                if (!opts.allow_missing_control_arm)
                    throw Error(ErrorCategory::validation,
                                "treated cluster with no sampled control units; "
                                "spillover contrast undefined (pass the allow flag "
                                "to drop such clusters)");
            } else {
                ++g1s;
                n1s += a.n;
                t0 += a.ybar0;
                t0n += a.n * a.ybar0;
            }
        } else {
            ++pe.g0;
            pe.n0 += a.n;
            c1 += a.ybar1;
            c1n += a.n * a.ybar1;
        }
    }
    if (pe.g1 == 0 || pe.g0 == 0)
        throw Error(ErrorCategory::validation,
                    "both arms must be populated (G1 = " + std::to_string(pe.g1) +
                        ", G0 = " + std::to_string(pe.g0) + ")");
    if (g1s == 0)
        throw Error(ErrorCategory::validation,
                    "no treated cluster has sampled control units");

    pe.theta_p1 = t1 / pe.g1 - c1 / pe.g0;
    pe.theta_s1 = t0 / g1s - c1 / pe.g0;
    pe.theta_p2 = t1n / pe.n1 - c1n / pe.n0;
    pe.theta_s2 = t0n / n1s - c1n / pe.n0;
    return pe;
}

PointEstimates point_estimates(const ExperimentPanel& panel,
                               const EstimateOptions& opts) {
    return point_estimates(cluster_averages(panel), opts);
}

std::vector<AdjustedAverages> adjusted_outcomes(const std::vector<ClusterAverages>& av) {
    double nbar = 0.0;
    for (const auto& a : av) nbar += a.n;
    nbar /= static_cast<double>(av.size());

    // Own-arm means of ybar^z * n.
    double t1 = 0.0, t0 = 0.0, c = 0.0;
    int g1 = 0, g0 = 0;
    for (const auto& a : av) {
        if (a.treated) {
            ++g1;
            t1 += a.n * a.ybar1;
            t0 += a.n * a.ybar0;
        } else {
            ++g0;
            c += a.n * a.ybar1;
        }
    }
    const double m1 = g1 ? t1 / g1 : 0.0;
    const double m0 = g1 ? t0 / g1 : 0.0;
    const double mc = g0 ? c / g0 : 0.0;

    std::vector<AdjustedAverages> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const auto& a = av[i];
        const double w = a.n / nbar;
        if (a.treated) {
            out[i].ytilde1 = w * (a.ybar1 - m1 / nbar);
            out[i].ytilde0 = w * (a.ybar0 - m0 / nbar);
        } else {
            out[i].ytilde1 = w * (a.ybar1 - mc / nbar);
            out[i].ytilde0 = out[i].ytilde1;
        }
    }
    return out;
}

std::vector<AdjustedAverages> adjusted_outcomes(const ExperimentPanel& panel) {
    return adjusted_outcomes(cluster_averages(panel));
}

CovariateAdjustment covariate_adjusted_estimate(
    const std::vector<ClusterAverages>& av,
    const std::vector<std::vector<double>>& psi,
    const std::vector<std::vector<int>>& tuples, int k, int l) {
    const std::size_t g = av.size();
    if (psi.size() != g)
        throw Error(ErrorCategory::config, "psi must have one vector per cluster");
    const std::size_t p = psi.empty() ? 0 : psi[0].size();
    for (const auto& v : psi)
        if (v.size() != p)
            throw Error(ErrorCategory::config, "psi vectors must share one dimension");
    if (p == 0) throw Error(ErrorCategory::config, "psi is empty");

    const auto adj = adjusted_outcomes(av);
    double nbar = 0.0;
    for (const auto& a : av) nbar += a.n;
    nbar /= static_cast<double>(g);

    const std::size_t n_tuples = tuples.size();
    Eigen::VectorXd dmu(static_cast<Eigen::Index>(n_tuples));
    Eigen::MatrixXd dpsi(static_cast<Eigen::Index>(n_tuples),
                         static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < n_tuples; ++j) {
        double mu1 = 0.0, mu0 = 0.0;
        Eigen::VectorXd p1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
        Eigen::VectorXd p0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
        for (int idx : tuples[j]) {
            const auto& a = av[static_cast<std::size_t>(idx)];
            Eigen::Map<const Eigen::VectorXd> pv(psi[static_cast<std::size_t>(idx)].data(),
                                                 static_cast<Eigen::Index>(p));
            if (a.treated) {
                mu1 += adj[static_cast<std::size_t>(idx)].ytilde1 * nbar;
                p1 += pv;
            } else {
                mu0 += adj[static_cast<std::size_t>(idx)].ytilde1 * nbar;
                p0 += pv;
            }
        }
        dmu(static_cast<Eigen::Index>(j)) = mu1 / l - mu0 / (k - l);
        dpsi.row(static_cast<Eigen::Index>(j)) = (p1 / l - p0 / (k - l)).transpose();
    }

    // Drop regressor columns without cross-tuple variation (constant psi
    // components adjust nothing); remaining collinearity is an error.
    std::vector<std::size_t> active;
    for (std::size_t c = 0; c < p; ++c) {
        Eigen::VectorXd col = dpsi.col(static_cast<Eigen::Index>(c));
        double mean = col.mean();
        double sd = std::sqrt((col.array() - mean).square().sum() /
                              std::max<std::size_t>(1, n_tuples - 1));
        double scale = std::max(1.0, std::abs(mean));
        if (sd > 1e-10 * scale) active.push_back(c);
    }

    CovariateAdjustment res;
    res.beta.assign(p, 0.0);
    if (!active.empty()) {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(n_tuples),
                          static_cast<Eigen::Index>(active.size() + 1));
        x.col(0).setOnes();
        for (std::size_t c = 0; c < active.size(); ++c)
            x.col(static_cast<Eigen::Index>(c + 1)) =
                dpsi.col(static_cast<Eigen::Index>(active[c]));
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
        qr.setThreshold(1e-10);
        if (qr.rank() < x.cols())
            throw Error(ErrorCategory::numeric,
                        "singular cross-tuple design: rank " +
                            std::to_string(qr.rank()) + " of " +
                            std::to_string(x.cols()) + " columns");
        Eigen::VectorXd coef = qr.solve(dmu);
        for (std::size_t c = 0; c < active.size(); ++c)
            res.beta[active[c]] = coef(static_cast<Eigen::Index>(c + 1));
    }

    // Mean psi over all clusters.
    Eigen::VectorXd psibar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (const auto& v : psi)
        psibar += Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(p));
    psibar /= static_cast<double>(g);

    Eigen::Map<const Eigen::VectorXd> beta(res.beta.data(), static_cast<Eigen::Index>(p));
    double n1 = 0.0, n0 = 0.0, s1 = 0.0, s0 = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        const auto& a = av[i];
        Eigen::Map<const Eigen::VectorXd> pv(psi[i].data(), static_cast<Eigen::Index>(p));
        const double term = a.n * a.ybar1 - (pv - psibar).dot(beta);
        if (a.treated) {
            n1 += a.n;
            s1 += term;
        } else {
            n0 += a.n;
            s0 += term;
        }
    }
    res.theta_p2_adj = s1 / n1 - s0 / n0;
    return res;
}

std::vector<std::vector<int>> tuples_as_indices(const ExperimentPanel& panel) {
    if (!panel.tuple_structure ||
        panel.tuple_structure->mode != StrataMode::small_strata)
        throw Error(ErrorCategory::validation,
                    "panel has no small-strata tuple structure");
    std::map<std::string, int> pos;
    for (std::size_t i = 0; i < panel.clusters.size(); ++i)
        pos[panel.clusters[i].cluster_id] = static_cast<int>(i);
    std::vector<std::vector<int>> out;
    out.reserve(panel.tuple_structure->tuples.size());
    for (const auto& tup : panel.tuple_structure->tuples) {
        std::vector<int> t;
        t.reserve(tup.size());
        for (const auto& id : tup) {
            auto it = pos.find(id);
            if (it == pos.end())
                throw Error(ErrorCategory::validation,
                            "tuple references unknown cluster '" + id + "'");
            t.push_back(it->second);
        }
        out.push_back(std::move(t));
    }
    return out;
}

CovariateAdjustment covariate_adjusted_estimate(
    const ExperimentPanel& panel, const std::vector<std::vector<double>>& psi) {
    auto tuples = tuples_as_indices(panel);
    return covariate_adjusted_estimate(cluster_averages(panel), psi, tuples,
                                       panel.tuple_structure->k,
                                       panel.tuple_structure->l);
}

std::vector<std::vector<double>> psi_cluster_mean_x(const ExperimentPanel& panel,
                                                    std::size_t x_col) {
    std::vector<std::vector<double>> psi;
    psi.reserve(panel.clusters.size());
    for (const auto& cl : panel.clusters) {
        double s = 0.0;
        int m = 0;
        for (const auto& u : cl.units) {
            if (!u.sampled) continue;
            if (x_col >= u.x.size())
                throw Error(ErrorCategory::validation,
                            "cluster " + cl.cluster_id + ": unit covariate column " +
                                std::to_string(x_col + 1) + " is absent");
            s += u.x[x_col];
            ++m;
        }
        psi.push_back({m ? s / m : 0.0});
    }
    return psi;
}

std::vector<std::vector<double>> psi_ng_power(const ExperimentPanel& panel, int power) {
    std::vector<std::vector<double>> psi;
    psi.reserve(panel.clusters.size());
    for (const auto& cl : panel.clusters)
        psi.push_back({std::pow(static_cast<double>(cl.n_g), power)});
    return psi;
}

}  // namespace twostage
