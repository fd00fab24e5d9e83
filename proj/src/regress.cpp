#include "twostage/regress.hpp"

#include <cmath>
#include <limits>

#include "twostage/assign.hpp"
#include "twostage/errors.hpp"

namespace twostage {

WeightScheme weight_scheme_from_string(const std::string& s) {
    if (s == "unweighted") return WeightScheme::unweighted;
    if (s == "inv_m") return WeightScheme::inv_m;
    if (s == "n_over_m") return WeightScheme::n_over_m;
    throw Error(ErrorCategory::config, "unknown weight scheme '" + s + "'");
}

RegressionData regression_data(const ExperimentPanel& panel, WeightScheme weights,
                               bool need_strata) {
    RegressionData d;
    d.n_clusters = static_cast<int>(panel.clusters.size());
    std::vector<int> strata_dense;
    if (need_strata) {
        std::vector<std::string> labels;
        for (const auto& cl : panel.clusters) {
            if (cl.s_g.empty())
                throw Error(ErrorCategory::validation,
                            "fixed effects need a stratum label on every cluster; "
                            "cluster " + cl.cluster_id + " has none");
            labels.push_back(cl.s_g);
        }
        d.n_strata = densify_labels(labels, strata_dense);
    }
    for (std::size_t g = 0; g < panel.clusters.size(); ++g) {
        const auto& cl = panel.clusters[g];
        const bool treated = cl.treated(panel.pi2);
        const int m = cl.sampled_count();
        if (m == 0) continue;
        double w = 1.0;
        if (weights == WeightScheme::inv_m) w = 1.0 / m;
        if (weights == WeightScheme::n_over_m) w = static_cast<double>(cl.n_g) / m;
        for (const auto& u : cl.units) {
            if (!u.sampled) continue;
            d.y.push_back(u.outcome);
            d.z.push_back(static_cast<uint8_t>(u.z));
            d.l.push_back(static_cast<uint8_t>(treated && u.z == 0 ? 1 : 0));
            d.w.push_back(w);
            d.cluster.push_back(static_cast<int>(g));
            d.stratum.push_back(need_strata ? strata_dense[g] : -1);
        }
    }
    return d;
}

namespace {

constexpr int kAbsorbThreshold = 50;  // dummies up to here, demeaning beyond

struct Design {
    // Per-observation regressor values; at most 4 nonzero entries
    // (intercept, z, l, one dummy), or 2 demeaned columns when absorbed.
    Eigen::MatrixXd xtx;
    Eigen::VectorXd xty;
    int ncol = 0;
    bool absorbed = false;
    // Demeaned copies (absorbed path).
    std::vector<double> zt, lt, yt;
};

void fill_row(const RegressionData& d, std::size_t i, bool fe_dummies,
              int idx[4], double val[4], int& nnz) {
    nnz = 0;
    idx[nnz] = 0;
    val[nnz++] = 1.0;
    if (d.z[i]) {
        idx[nnz] = 1;
        val[nnz++] = 1.0;
    }
    if (d.l[i]) {
        idx[nnz] = 2;
        val[nnz++] = 1.0;
    }
    if (fe_dummies && d.stratum[i] > 0) {
        idx[nnz] = 2 + d.stratum[i];  // dummy for stratum s sits at column 2+s
        val[nnz++] = 1.0;
    }
}

Design build_design(const RegressionData& d, const RegressionSpec& spec) {
    Design ds;
    const std::size_t n = d.y.size();
    const bool fe = spec.fixed_effects;
    ds.absorbed = fe && d.n_strata > kAbsorbThreshold;

    if (!ds.absorbed) {
        ds.ncol = 3 + (fe ? d.n_strata - 1 : 0);
        ds.xtx = Eigen::MatrixXd::Zero(ds.ncol, ds.ncol);
        ds.xty = Eigen::VectorXd::Zero(ds.ncol);
        int idx[4];
        double val[4];
        int nnz;
        for (std::size_t i = 0; i < n; ++i) {
            fill_row(d, i, fe, idx, val, nnz);
            const double w = d.w[i];
            for (int a = 0; a < nnz; ++a) {
                ds.xty(idx[a]) += w * val[a] * d.y[i];
                for (int b = 0; b < nnz; ++b)
                    ds.xtx(idx[a], idx[b]) += w * val[a] * val[b];
            }
        }
        return ds;
    }

    // Absorb the strata: weighted within-stratum demeaning of y, z, l,
    // then a 2-column fit without intercept.
    ds.ncol = 2;
    std::vector<double> sw(static_cast<std::size_t>(d.n_strata), 0.0);
    std::vector<double> sy(static_cast<std::size_t>(d.n_strata), 0.0);
    std::vector<double> sz(static_cast<std::size_t>(d.n_strata), 0.0);
    std::vector<double> sl(static_cast<std::size_t>(d.n_strata), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(d.stratum[i]);
        sw[s] += d.w[i];
        sy[s] += d.w[i] * d.y[i];
        sz[s] += d.w[i] * d.z[i];
        sl[s] += d.w[i] * d.l[i];
    }
    ds.yt.resize(n);
    ds.zt.resize(n);
    ds.lt.resize(n);
    ds.xtx = Eigen::MatrixXd::Zero(2, 2);
    ds.xty = Eigen::VectorXd::Zero(2);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(d.stratum[i]);
        ds.yt[i] = d.y[i] - sy[s] / sw[s];
        ds.zt[i] = d.z[i] - sz[s] / sw[s];
        ds.lt[i] = d.l[i] - sl[s] / sw[s];
        const double w = d.w[i];
        ds.xtx(0, 0) += w * ds.zt[i] * ds.zt[i];
        ds.xtx(0, 1) += w * ds.zt[i] * ds.lt[i];
        ds.xtx(1, 1) += w * ds.lt[i] * ds.lt[i];
        ds.xty(0) += w * ds.zt[i] * ds.yt[i];
        ds.xty(1) += w * ds.lt[i] * ds.yt[i];
    }
    ds.xtx(1, 0) = ds.xtx(0, 1);
    return ds;
}

std::vector<std::string> column_names(const RegressionData& d,
                                      const RegressionSpec& spec, bool absorbed) {
    if (absorbed) return {"z", "l"};
    std::vector<std::string> names = {"intercept", "z", "l"};
    if (spec.fixed_effects)
        for (int s = 1; s < d.n_strata; ++s)
            names.push_back("stratum_" + std::to_string(s));
    return names;
}

}  // namespace

RegressionFit ols_inference(const RegressionData& data, const RegressionSpec& spec) {
    const std::size_t n = data.y.size();
    if (n == 0) throw Error(ErrorCategory::validation, "no observations");
    if (spec.fixed_effects && data.n_strata < 1)
        throw Error(ErrorCategory::validation, "fixed effects requested without strata");

    Design ds = build_design(data, spec);
    auto names = column_names(data, spec, ds.absorbed);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ds.xtx);
    qr.setThreshold(1e-10);
    if (qr.rank() < ds.ncol) {
        const auto& perm = qr.colsPermutation().indices();
        std::string bad;
        for (int c = static_cast<int>(qr.rank()); c < ds.ncol; ++c)
            bad += (bad.empty() ? "" : ", ") + names[static_cast<std::size_t>(perm(c))];
        throw Error(ErrorCategory::numeric, "design matrix is rank deficient; "
                                            "dependent column(s): " + bad);
    }
    Eigen::VectorXd coef = qr.solve(ds.xty);

    RegressionFit fit;
    fit.n_obs = static_cast<int>(n);
    fit.fe_absorbed = ds.absorbed;
    fit.coef_names = names;
    const int i1 = ds.absorbed ? 0 : 1;  // beta1 column
    const int i2 = ds.absorbed ? 1 : 2;
    fit.alpha = ds.absorbed ? std::numeric_limits<double>::quiet_NaN() : coef(0);
    fit.beta1 = coef(i1);
    fit.beta2 = coef(i2);

    // Residuals under the full model (demeaning reproduces them exactly).
    std::vector<double> resid(n);
    if (ds.absorbed) {
        for (std::size_t i = 0; i < n; ++i)
            resid[i] = ds.yt[i] - fit.beta1 * ds.zt[i] - fit.beta2 * ds.lt[i];
    } else {
        int idx[4];
        double val[4];
        int nnz;
        for (std::size_t i = 0; i < n; ++i) {
            fill_row(data, i, spec.fixed_effects, idx, val, nnz);
            double yhat = 0.0;
            for (int a = 0; a < nnz; ++a) yhat += val[a] * coef(idx[a]);
            resid[i] = data.y[i] - yhat;
        }
    }

    // Sandwich meat.
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(ds.ncol, ds.ncol);
    if (spec.se_type == SeType::hc_robust) {
        if (ds.absorbed) {
            for (std::size_t i = 0; i < n; ++i) {
                const double s = data.w[i] * resid[i];
                const double r2 = s * s;
                meat(0, 0) += r2 * ds.zt[i] * ds.zt[i];
                meat(0, 1) += r2 * ds.zt[i] * ds.lt[i];
                meat(1, 1) += r2 * ds.lt[i] * ds.lt[i];
            }
            meat(1, 0) = meat(0, 1);
        } else {
            int idx[4];
            double val[4];
            int nnz;
            for (std::size_t i = 0; i < n; ++i) {
                fill_row(data, i, spec.fixed_effects, idx, val, nnz);
                const double r2 = data.w[i] * data.w[i] * resid[i] * resid[i];
                for (int a = 0; a < nnz; ++a)
                    for (int b = 0; b < nnz; ++b)
                        meat(idx[a], idx[b]) += r2 * val[a] * val[b];
            }
        }
        if (spec.hc1) {
            const int kparams = ds.absorbed ? data.n_strata + 2 : ds.ncol;
            meat *= static_cast<double>(n) / std::max(1, static_cast<int>(n) - kparams);
        }
    } else if (spec.se_type == SeType::cluster) {
        Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(data.n_clusters, ds.ncol);
        if (ds.absorbed) {
            for (std::size_t i = 0; i < n; ++i) {
                const double s = data.w[i] * resid[i];
                agg(data.cluster[i], 0) += s * ds.zt[i];
                agg(data.cluster[i], 1) += s * ds.lt[i];
            }
        } else {
            int idx[4];
            double val[4];
            int nnz;
            for (std::size_t i = 0; i < n; ++i) {
                fill_row(data, i, spec.fixed_effects, idx, val, nnz);
                const double s = data.w[i] * resid[i];
                for (int a = 0; a < nnz; ++a) agg(data.cluster[i], idx[a]) += s * val[a];
            }
        }
        meat = agg.transpose() * agg;
    } else {  // hc2_cluster: leverage-adjusted cluster aggregates
        Eigen::MatrixXd bread_inv = ds.xtx.inverse();
        Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(data.n_clusters, ds.ncol);
        // Group observation indices per cluster.
        std::vector<std::vector<int>> members(static_cast<std::size_t>(data.n_clusters));
        for (std::size_t i = 0; i < n; ++i)
            members[static_cast<std::size_t>(data.cluster[i])].push_back(
                static_cast<int>(i));
        int idx[4];
        double val[4];
        int nnz;
        for (int g = 0; g < data.n_clusters; ++g) {
            const auto& m = members[static_cast<std::size_t>(g)];
            if (m.empty()) continue;
            const int mg = static_cast<int>(m.size());
            Eigen::MatrixXd t(mg, ds.ncol);  // sqrt(w) x rows
            Eigen::VectorXd e(mg);           // sqrt(w) residuals
            for (int r = 0; r < mg; ++r) {
                const std::size_t i = static_cast<std::size_t>(m[static_cast<std::size_t>(r)]);
                const double sw = std::sqrt(data.w[i]);
                t.row(r).setZero();
                if (ds.absorbed) {
                    t(r, 0) = sw * ds.zt[i];
                    t(r, 1) = sw * ds.lt[i];
                } else {
                    fill_row(data, i, spec.fixed_effects, idx, val, nnz);
                    for (int a = 0; a < nnz; ++a) t(r, idx[a]) = sw * val[a];
                }
                e(r) = sw * resid[i];
            }
            Eigen::MatrixXd block =
                Eigen::MatrixXd::Identity(mg, mg) - t * bread_inv * t.transpose();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
            Eigen::VectorXd lam = es.eigenvalues().cwiseMax(1e-12);
            Eigen::MatrixXd inv_sqrt = es.eigenvectors() *
                                       lam.cwiseInverse().cwiseSqrt().asDiagonal() *
                                       es.eigenvectors().transpose();
            agg.row(g) = (t.transpose() * (inv_sqrt * e)).transpose();
        }
        meat = agg.transpose() * agg;
    }

    Eigen::MatrixXd bread = qr.solve(Eigen::MatrixXd::Identity(ds.ncol, ds.ncol));
    fit.vcov = bread * meat * bread.transpose();
    fit.se_beta1 = std::sqrt(std::max(0.0, fit.vcov(i1, i1)));
    fit.se_beta2 = std::sqrt(std::max(0.0, fit.vcov(i2, i2)));
    return fit;
}

RegressionFit ols_inference(const ExperimentPanel& panel, const RegressionSpec& spec) {
    return ols_inference(regression_data(panel, spec.weights, spec.fixed_effects),
                         spec);
}

double cluster_robust_v(const RegressionData& data, const RegressionFit& fit) {
    // Arm-specific residual aggregates per cluster; requires the fit to
    // carry an intercept (no absorbed effects).
    if (fit.fe_absorbed)
        throw Error(ErrorCategory::config,
                    "direct cluster-robust evaluation needs the intercept model");
    const std::size_t n = data.y.size();
    std::vector<double> agg1(static_cast<std::size_t>(data.n_clusters), 0.0);
    std::vector<double> agg0(static_cast<std::size_t>(data.n_clusters), 0.0);
    std::vector<int> m1(static_cast<std::size_t>(data.n_clusters), 0);
    std::vector<int> m(static_cast<std::size_t>(data.n_clusters), 0);
    std::vector<uint8_t> has_treated_unit(static_cast<std::size_t>(data.n_clusters), 0);
    std::vector<uint8_t> in_control_arm(static_cast<std::size_t>(data.n_clusters), 0);
    std::vector<double> wg(static_cast<std::size_t>(data.n_clusters), 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t g = static_cast<std::size_t>(data.cluster[i]);
        const double resid = data.y[i] - fit.alpha - fit.beta1 * data.z[i] -
                             fit.beta2 * data.l[i];
        ++m[g];
        wg[g] = data.w[i];
        if (data.z[i]) {
            agg1[g] += resid;
            ++m1[g];
            has_treated_unit[g] = 1;
        } else if (!data.l[i]) {
            agg0[g] += resid;
            in_control_arm[g] = 1;
        }
    }
    // Arm denominators: cluster weights (n_over_m: N_g = w_g * M_g).
    double d1 = 0.0, d0 = 0.0;
    for (std::size_t g = 0; g < wg.size(); ++g) {
        if (m[g] == 0) continue;
        const double size = wg[g] * m[g];
        if (has_treated_unit[g]) d1 += size;
        else if (in_control_arm[g]) d0 += size;
    }
    double v = 0.0;
    int n_clusters = 0;
    for (std::size_t g = 0; g < wg.size(); ++g) {
        if (m[g] == 0) continue;
        ++n_clusters;
        const double size = wg[g] * m[g];
        double term = 0.0;
        if (has_treated_unit[g]) {
            term = (size / d1) * (agg1[g] / m1[g]);
        } else if (in_control_arm[g]) {
            term = -(size / d0) * (agg0[g] / m[g]);
        }
        v += term * term;
    }
    return static_cast<double>(n_clusters) * v;
}

double cluster_robust_v(const ExperimentPanel& panel, const RegressionFit& fit,
                        const RegressionSpec& spec) {
    return cluster_robust_v(regression_data(panel, spec.weights, spec.fixed_effects),
                            fit);
}

}  // namespace twostage
