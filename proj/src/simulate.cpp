#include "twostage/simulate.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "twostage/assign.hpp"
#include "twostage/errors.hpp"
#include "twostage/regress.hpp"
#include "twostage/rng.hpp"
#include "twostage/stats.hpp"

namespace twostage {

namespace {
// Stream purposes (see rng.hpp).
constexpr std::uint64_t kPopStream = 1;
constexpr std::uint64_t kStageOneStream = 2;
constexpr std::uint64_t kStageTwoStream = 3;
constexpr std::uint64_t kTruthStream = 4;
}  // namespace

DesignKind design_from_string(const std::string& s) {
    if (s == "C") return DesignKind::C;
    if (s == "S-2") return DesignKind::S2;
    if (s == "S-4") return DesignKind::S4;
    if (s == "S-4O") return DesignKind::S4O;
    if (s == "MT-A") return DesignKind::MTA;
    if (s == "MT-B") return DesignKind::MTB;
    if (s == "MT-C") return DesignKind::MTC;
    throw Error(ErrorCategory::config, "unknown design '" + s + "'");
}

std::string to_string(DesignKind d) {
    switch (d) {
        case DesignKind::C: return "C";
        case DesignKind::S2: return "S-2";
        case DesignKind::S4: return "S-4";
        case DesignKind::S4O: return "S-4O";
        case DesignKind::MTA: return "MT-A";
        case DesignKind::MTB: return "MT-B";
        case DesignKind::MTC: return "MT-C";
    }
    return "?";
}

bool is_matched_tuples(DesignKind d) {
    return d == DesignKind::MTA || d == DesignKind::MTB || d == DesignKind::MTC;
}

bool index_depends_on_weighting(DesignKind d) {
    return d == DesignKind::S4O || d == DesignKind::MTC;
}

double optimal_index_first_stage(double c, int n, Weighting weighting) {
    const double base = c + static_cast<double>(n) / 100.0;
    if (weighting == Weighting::equal) return base;
    return static_cast<double>(n) * base - (25.0 / 3.0) * static_cast<double>(n);
}

DgpConfig resolve_dgp(DgpConfig cfg) {
    if (cfg.model == "homogeneous") {
        cfg.alpha_00 = cfg.alpha_0p = cfg.alpha_1p = 1.0;
        cfg.beta_00 = cfg.beta_0p = cfg.beta_1p = 1.0;
    } else if (cfg.model == "heterogeneous") {
        cfg.alpha_1p = cfg.beta_1p = 2.0;
        cfg.alpha_0p = cfg.beta_0p = 0.5;
        cfg.alpha_00 = cfg.beta_00 = 1.0;
    } else if (cfg.model != "custom") {
        throw Error(ErrorCategory::config, "unknown model '" + cfg.model + "'");
    }
    if (!(cfg.sampling_fraction > 0.0 && cfg.sampling_fraction <= 1.0))
        throw Error(ErrorCategory::config, "sampling_fraction must lie in (0,1]");
    if (cfg.g < 2) throw Error(ErrorCategory::config, "g must be at least 2");
    return cfg;
}

namespace {

struct MuSet {
    double mu00, mu0p, mu1p;
};

MuSet mu_of(const DgpConfig& cfg) {
    return {cfg.mu00, cfg.mu00 + cfg.omega, cfg.mu00 + cfg.tau + cfg.omega};
}

double noise_sd(double scale, bool as_variance) {
    return as_variance ? std::sqrt(scale) : scale;
}

// Draw one cluster into the arrays; shared by populations and the truth MC.
void draw_cluster(const DgpConfig& cfg, const MuSet& mu, Philox& rng,
                  double& c_out, int& n_out, std::vector<double>& x1,
                  std::vector<double>& x2, std::vector<double>& y00,
                  std::vector<double>& y0p, std::vector<double>& y1p) {
    const double usd = noise_sd(cfg.u_scale, cfg.noise_as_variance);
    const double esd = noise_sd(cfg.eps_scale, cfg.noise_as_variance);
    const double c = rng.uniform01();
    const int n = 50 + static_cast<int>(rng.below(101));
    c_out = c;
    n_out = n;
    const double sigma = c * (n - 100) / 100.0;
    const double size_term = cfg.gamma * (n - 100);
    const double c_dev = c - 0.5;
    for (int i = 0; i < n; ++i) {
        const double u = rng.normal() * usd;
        const double xa = n * u / 100.0;
        const double xb = rng.uniform01();
        const double eps = rng.normal() * esd;
        const double ratio = xa / (xb + 0.1);
        const double shock = sigma * eps + size_term;
        x1.push_back(xa);
        x2.push_back(xb);
        y00.push_back(mu.mu00 + cfg.alpha_00 * ratio + cfg.beta_00 * c_dev + shock);
        y0p.push_back(mu.mu0p + cfg.alpha_0p * ratio + cfg.beta_0p * c_dev + shock);
        y1p.push_back(mu.mu1p + cfg.alpha_1p * ratio + cfg.beta_1p * c_dev + shock);
    }
}

}  // namespace

SimPopulation generate_population(const DgpConfig& cfg, std::uint64_t replication) {
    const MuSet mu = mu_of(cfg);
    SimPopulation pop;
    pop.g = cfg.g;
    pop.c.resize(static_cast<std::size_t>(cfg.g));
    pop.n.resize(static_cast<std::size_t>(cfg.g));
    pop.offset.assign(1, 0);
    for (int gc = 0; gc < cfg.g; ++gc) {
        Philox rng(cfg.seed, mix_stream(kPopStream, replication,
                                        static_cast<std::uint64_t>(gc)));
        draw_cluster(cfg, mu, rng, pop.c[static_cast<std::size_t>(gc)],
                     pop.n[static_cast<std::size_t>(gc)], pop.x1, pop.x2, pop.y00,
                     pop.y0p, pop.y1p);
        pop.offset.push_back(static_cast<int>(pop.x1.size()));

        const int n = pop.n[static_cast<std::size_t>(gc)];
        if (cfg.sampling_fraction >= 1.0) {
            pop.sampled.insert(pop.sampled.end(), static_cast<std::size_t>(n), 1);
        } else {
            int m = std::max(2, static_cast<int>(std::floor(
                                    cfg.sampling_fraction * n + 1e-9)));
            std::vector<uint8_t> flags(static_cast<std::size_t>(n), 0);
            for (int p : rng.sample_without_replacement(n, m))
                flags[static_cast<std::size_t>(p)] = 1;
            pop.sampled.insert(pop.sampled.end(), flags.begin(), flags.end());
        }
    }
    return pop;
}

TrueEstimands true_estimands(const DgpConfig& cfg) {
    // Cached by the outcome-model parameters (assignment and panel-shape
    // fields do not move the estimands).
    std::uint64_t h = 0;
    auto put = [&h](double v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        h = mix64(h ^ bits);
    };
    put(cfg.mu00);
    put(cfg.tau);
    put(cfg.omega);
    put(cfg.gamma);
    put(cfg.alpha_00);
    put(cfg.alpha_0p);
    put(cfg.alpha_1p);
    put(cfg.beta_00);
    put(cfg.beta_0p);
    put(cfg.beta_1p);
    put(cfg.u_scale);
    put(cfg.eps_scale);
    put(cfg.noise_as_variance ? 1.0 : 0.0);

    static std::mutex mu_lock;
    static std::map<std::uint64_t, TrueEstimands> cache;
    {
        std::lock_guard<std::mutex> lk(mu_lock);
        auto it = cache.find(h);
        if (it != cache.end()) return it->second;
    }

    // ~1e7 units of population means.
    const MuSet mu = mu_of(cfg);
    const int n_clusters = 100000;
    double sum_eq_p = 0.0, sum_eq_s = 0.0;
    double sum_n = 0.0, sum_sz_p = 0.0, sum_sz_s = 0.0;
    std::vector<double> x1, x2, y00, y0p, y1p;
    for (int gc = 0; gc < n_clusters; ++gc) {
        x1.clear();
        x2.clear();
        y00.clear();
        y0p.clear();
        y1p.clear();
        Philox rng(h, mix_stream(kTruthStream, 0, static_cast<std::uint64_t>(gc)));
        double c;
        int n;
        draw_cluster(cfg, mu, rng, c, n, x1, x2, y00, y0p, y1p);
        double dp = 0.0, dsp = 0.0;
        for (int i = 0; i < n; ++i) {
            dp += y1p[static_cast<std::size_t>(i)] - y00[static_cast<std::size_t>(i)];
            dsp += y0p[static_cast<std::size_t>(i)] - y00[static_cast<std::size_t>(i)];
        }
        sum_eq_p += dp / n;
        sum_eq_s += dsp / n;
        sum_sz_p += dp;
        sum_sz_s += dsp;
        sum_n += n;
    }
    TrueEstimands t;
    t.theta_p1 = sum_eq_p / n_clusters;
    t.theta_s1 = sum_eq_s / n_clusters;
    t.theta_p2 = sum_sz_p / sum_n;
    t.theta_s2 = sum_sz_s / sum_n;

    std::lock_guard<std::mutex> lk(mu_lock);
    cache.emplace(h, t);
    return t;
}

namespace {

std::uint64_t pair_class_key(DesignPair pair, Weighting w) {
    return mix64(static_cast<std::uint64_t>(pair.first) * 131 +
                 static_cast<std::uint64_t>(pair.second) * 17 +
                 (w == Weighting::size ? 1 : 0));
}

struct FirstStage {
    std::vector<uint8_t> treated;
    bool small_strata = false;
    std::vector<std::vector<int>> tuples;
    std::vector<double> tuple_scores;
    int k = 2, l = 1;
    std::vector<int> strata;  // dense labels for the large-strata path
    int n_strata = 1;
};

// Variance-minimizing stage-one score for the S-4O / MT-C designs: the
// conditional mean of the arm-combination of cluster outcomes given
// (C, N). The mu shifts cancel after the size-weighted centering, so the
// score does not depend on the treatment effects. For the homogeneous
// model the equal-weighting case is proportional to c + n/100.
double optimal_score(const DgpConfig& cfg, double c, int n, Weighting w) {
    const double inv_p = 1.0 / cfg.pi1;
    const double inv_q = 1.0 / (1.0 - cfg.pi1);
    const double b_combo = inv_p * cfg.beta_1p + inv_q * cfg.beta_00;
    const double g_combo = (inv_p + inv_q) * cfg.gamma;
    // Cluster sizes are uniform on {50..150}: E[N] = 100, Var[N] = 850.
    const double mean_n = 100.0, var_n = 850.0;
    const double m = b_combo * (c - 0.5) + g_combo * (n - mean_n);
    if (w == Weighting::equal) return m;
    return n * (m - g_combo * var_n / mean_n);
}

std::vector<double> first_stage_scores(const SimPopulation& pop, const DgpConfig& cfg,
                                       DesignKind kind, Weighting w) {
    std::vector<double> s(static_cast<std::size_t>(pop.g), 0.0);
    for (int gc = 0; gc < pop.g; ++gc) {
        const std::size_t i = static_cast<std::size_t>(gc);
        switch (kind) {
            case DesignKind::S2:
            case DesignKind::S4:
            case DesignKind::MTA: s[i] = pop.c[i]; break;
            case DesignKind::MTB: s[i] = static_cast<double>(pop.n[i]); break;
            case DesignKind::S4O:
            case DesignKind::MTC:
                s[i] = optimal_score(cfg, pop.c[i], pop.n[i], w);
                break;
            case DesignKind::C: break;
        }
    }
    return s;
}

FirstStage run_first_stage(const SimPopulation& pop, const DgpConfig& cfg,
                           DesignKind kind, Weighting w, Philox& rng) {
    FirstStage fs;
    switch (kind) {
        case DesignKind::C: {
            fs.treated = complete_randomize_with(pop.g, cfg.pi1, rng);
            fs.strata.assign(static_cast<std::size_t>(pop.g), 0);
            fs.n_strata = 1;
            break;
        }
        case DesignKind::S2:
        case DesignKind::S4:
        case DesignKind::S4O: {
            auto scores = first_stage_scores(pop, cfg, kind, w);
            std::vector<double> cuts;
            if (kind == DesignKind::S2) cuts = {0.5};
            else if (kind == DesignKind::S4) cuts = {0.25, 0.5, 0.75};
            else cuts = empirical_quantile_cuts(scores, 4);
            fs.strata = bins_from_cutpoints(scores, cuts);
            fs.n_strata = static_cast<int>(cuts.size()) + 1;
            fs.treated =
                stratified_block_assign_with(fs.strata, fs.n_strata, cfg.pi1, rng);
            break;
        }
        case DesignKind::MTA:
        case DesignKind::MTB:
        case DesignKind::MTC: {
            auto scores = first_stage_scores(pop, cfg, kind, w);
            derive_tuple_shape(cfg.pi1, fs.k, fs.l);
            auto mr = match_tuples_with(scores, fs.k, fs.l, rng);
            fs.treated = std::move(mr.treated);
            fs.tuples = std::move(mr.tuples);
            fs.tuple_scores = std::move(mr.tuple_scores);
            fs.small_strata = true;
            break;
        }
    }
    return fs;
}

SecondStageDesign second_stage_design(const DgpConfig& cfg, DesignKind kind) {
    SecondStageDesign d;
    d.pi2 = cfg.pi2;
    switch (kind) {
        case DesignKind::C: d.mechanism = Mechanism::complete; break;
        case DesignKind::S2:
            d.mechanism = Mechanism::sbr;
            d.n_strata = 2;
            break;
        case DesignKind::S4:
        case DesignKind::S4O:
            d.mechanism = Mechanism::sbr;
            d.n_strata = 4;
            break;
        case DesignKind::MTA:
        case DesignKind::MTB:
        case DesignKind::MTC: d.mechanism = Mechanism::matched_tuples; break;
    }
    return d;
}

double unit_score_second_stage(const SimPopulation& pop, DesignKind kind,
                               std::size_t u) {
    switch (kind) {
        case DesignKind::C: return 0.0;
        case DesignKind::S2:
        case DesignKind::S4:
        case DesignKind::MTA: return pop.x1[u];
        case DesignKind::MTB: return pop.x2[u];
        case DesignKind::S4O:
        case DesignKind::MTC: return pop.x1[u] / (pop.x2[u] + 0.1);
    }
    return 0.0;
}

// Realized second stage for every treated cluster; z is all-units long.
std::vector<uint8_t> run_second_stage(const SimPopulation& pop, const DgpConfig& cfg,
                                      DesignKind kind, const std::vector<uint8_t>& treated,
                                      std::uint64_t rep, std::uint64_t pck) {
    std::vector<uint8_t> z(static_cast<std::size_t>(pop.units()), 0);
    const SecondStageDesign design = second_stage_design(cfg, kind);
    for (int gc = 0; gc < pop.g; ++gc) {
        if (!treated[static_cast<std::size_t>(gc)]) continue;
        const int lo = pop.offset[static_cast<std::size_t>(gc)];
        const int hi = pop.offset[static_cast<std::size_t>(gc) + 1];
        std::vector<double> scores(static_cast<std::size_t>(hi - lo));
        for (int u = lo; u < hi; ++u)
            scores[static_cast<std::size_t>(u - lo)] =
                unit_score_second_stage(pop, kind, static_cast<std::size_t>(u));
        Philox rng(cfg.seed,
                   mix_stream(kStageTwoStream, rep,
                              pck ^ mix64(static_cast<std::uint64_t>(gc) + 1)));
        auto zz = assign_second_stage_scores(scores, design, rng);
        for (int u = lo; u < hi; ++u)
            z[static_cast<std::size_t>(u)] =
                static_cast<uint8_t>(zz[static_cast<std::size_t>(u - lo)]);
    }
    return z;
}

std::vector<ClusterAverages> realized_averages(const SimPopulation& pop,
                                               const DgpConfig& cfg,
                                               const std::vector<uint8_t>& treated,
                                               const std::vector<uint8_t>& z) {
    std::vector<ClusterAverages> av(static_cast<std::size_t>(pop.g));
    for (int gc = 0; gc < pop.g; ++gc) {
        const std::size_t gi = static_cast<std::size_t>(gc);
        auto& a = av[gi];
        a.n = pop.n[gi];
        a.treated = treated[gi] != 0;
        a.h = a.treated ? cfg.pi2 : 0.0;
        const int lo = pop.offset[gi], hi = pop.offset[gi + 1];
        double s1 = 0.0, s0 = 0.0, s = 0.0;
        for (int u = lo; u < hi; ++u) {
            const std::size_t ui = static_cast<std::size_t>(u);
            if (!pop.sampled[ui]) continue;
            ++a.m;
            if (a.treated) {
                if (z[ui]) {
                    ++a.m1;
                    s1 += pop.y1p[ui];
                } else {
                    ++a.m0;
                    s0 += pop.y0p[ui];
                }
            } else {
                s += pop.y00[ui];
            }
        }
        if (a.treated) {
            a.ybar1 = a.m1 ? s1 / a.m1 : std::numeric_limits<double>::quiet_NaN();
            a.ybar0 = a.m0 ? s0 / a.m0 : std::numeric_limits<double>::quiet_NaN();
        } else {
            a.ybar1 = a.ybar0 = a.m ? s / a.m : 0.0;
        }
    }
    return av;
}

double realized_outcome(const SimPopulation& pop, std::size_t u, bool cluster_treated,
                        bool unit_treated) {
    if (!cluster_treated) return pop.y00[u];
    return unit_treated ? pop.y1p[u] : pop.y0p[u];
}

}  // namespace

RepOutcome simulate_one(const SimPopulation& pop, const DgpConfig& cfg,
                        DesignPair pair, Weighting weighting_class,
                        std::uint64_t replication, const RepOptions& opts) {
    const std::uint64_t pck = pair_class_key(pair, weighting_class);
    Philox rng1(cfg.seed, mix_stream(kStageOneStream, replication, pck));
    FirstStage fs = run_first_stage(pop, cfg, pair.first, weighting_class, rng1);
    auto z = run_second_stage(pop, cfg, pair.second, fs.treated, replication, pck);
    auto av = realized_averages(pop, cfg, fs.treated, z);

    RepOutcome out;
    out.pe = point_estimates(av);

    if (opts.run_tests && opts.analysis == McAnalysis::adjusted_t) {
        const double theta[4] = {out.pe.theta_p1, out.pe.theta_p2, out.pe.theta_s1,
                                 out.pe.theta_s2};
        const char* names[4] = {"theta_p1", "theta_p2", "theta_s1", "theta_s2"};
        const EffectArm arms[4] = {EffectArm::primary, EffectArm::primary,
                                   EffectArm::spillover, EffectArm::spillover};
        const Weighting ws[4] = {Weighting::equal, Weighting::size, Weighting::equal,
                                 Weighting::size};
        for (int e = 0; e < 4; ++e) {
            VarianceEstimate v;
            if (fs.small_strata) {
                v = v_hat_small_strata(av, fs.tuples, fs.k, fs.l, arms[e], ws[e],
                                       &fs.tuple_scores);
            } else {
                v = v_hat_large_strata(
                    av, fs.strata, fs.n_strata, arms[e], ws[e], cfg.pi1,
                    std::vector<double>(static_cast<std::size_t>(fs.n_strata), 0.0));
            }
            auto t = adjusted_t_test(theta[e], v, pop.g, opts.theta0, opts.alpha);
            out.test_names.push_back(names[e]);
            out.rejected.push_back(t.reject ? 1 : 0);
            out.pvalues.push_back(t.pvalue);
        }
    } else if (opts.run_tests) {
        // Pooled OLS comparators on the realized unit panel.
        RegressionData d;
        d.n_clusters = pop.g;
        d.n_strata = fs.small_strata ? static_cast<int>(fs.tuples.size()) : fs.n_strata;
        std::vector<int> stratum_of(static_cast<std::size_t>(pop.g), 0);
        if (fs.small_strata) {
            for (std::size_t j = 0; j < fs.tuples.size(); ++j)
                for (int idx : fs.tuples[j])
                    stratum_of[static_cast<std::size_t>(idx)] = static_cast<int>(j);
        } else {
            stratum_of = fs.strata;
        }
        for (int gc = 0; gc < pop.g; ++gc) {
            const std::size_t gi = static_cast<std::size_t>(gc);
            const bool tr = fs.treated[gi] != 0;
            for (int u = pop.offset[gi]; u < pop.offset[gi + 1]; ++u) {
                const std::size_t ui = static_cast<std::size_t>(u);
                if (!pop.sampled[ui]) continue;
                d.y.push_back(realized_outcome(pop, ui, tr, z[ui] != 0));
                d.z.push_back(z[ui]);
                d.l.push_back(static_cast<uint8_t>(tr && !z[ui] ? 1 : 0));
                d.w.push_back(1.0);
                d.cluster.push_back(gc);
                d.stratum.push_back(stratum_of[gi]);
            }
        }
        const double crit = normal_quantile(1.0 - opts.alpha / 2.0);
        const struct {
            const char* name;
            bool fe;
            SeType se;
        } methods[4] = {{"ols_robust", false, SeType::hc_robust},
                        {"ols_cluster", false, SeType::cluster},
                        {"ols_fe_robust", true, SeType::hc_robust},
                        {"ols_fe_cluster", true, SeType::cluster}};
        for (const auto& m : methods) {
            RegressionSpec spec;
            spec.weights = WeightScheme::unweighted;
            spec.fixed_effects = m.fe;
            spec.se_type = m.se;
            auto fit = ols_inference(d, spec);
            const double t1 = (fit.beta1 - opts.theta0) / fit.se_beta1;
            const double t2 = (fit.beta2 - opts.theta0) / fit.se_beta2;
            out.test_names.push_back(std::string(m.name) + ":primary");
            out.rejected.push_back(std::abs(t1) > crit ? 1 : 0);
            out.pvalues.push_back(2.0 * (1.0 - normal_cdf(std::abs(t1))));
            out.test_names.push_back(std::string(m.name) + ":spillover");
            out.rejected.push_back(std::abs(t2) > crit ? 1 : 0);
            out.pvalues.push_back(2.0 * (1.0 - normal_cdf(std::abs(t2))));
        }
    }

    if (opts.with_covariate_adjustment && fs.small_strata) {
        // psi: sampled-unit mean of x1/(x2+0.1) per cluster.
        std::vector<std::vector<double>> psi(static_cast<std::size_t>(pop.g));
        for (int gc = 0; gc < pop.g; ++gc) {
            const std::size_t gi = static_cast<std::size_t>(gc);
            double s = 0.0;
            int m = 0;
            for (int u = pop.offset[gi]; u < pop.offset[gi + 1]; ++u) {
                const std::size_t ui = static_cast<std::size_t>(u);
                if (!pop.sampled[ui]) continue;
                s += pop.x1[ui] / (pop.x2[ui] + 0.1);
                ++m;
            }
            psi[gi] = {m ? s / m : 0.0};
        }
        auto adj = covariate_adjusted_estimate(av, psi, fs.tuples, fs.k, fs.l);
        auto vadj = covariate_adjusted_variance(av, fs.tuples, fs.k, fs.l, psi,
                                                adj.beta, &fs.tuple_scores);
        out.has_adjusted = true;
        out.theta_p2_adj = adj.theta_p2_adj;
        out.v2_adj = vadj.v;
    }
    return out;
}

int worker_count(int requested) {
    int n = requested > 0 ? requested
                          : static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* cap = std::getenv("TWOSTAGE_THREADS")) {
        int c = std::atoi(cap);
        if (c >= 1) n = std::min(n, c);
    }
    return n;
}

McTable run_mc_grid(const SimConfig& cfg_in) {
    SimConfig cfg = cfg_in;
    cfg.dgp = resolve_dgp(cfg.dgp);
    if (cfg.replications < 1)
        throw Error(ErrorCategory::config, "replications must be at least 1");
    if (cfg.estimands.empty())
        throw Error(ErrorCategory::config, "no estimands requested");

    const bool mse = cfg.kind == McKind::mse_ratio;
    std::vector<DesignPair> pairs = cfg.pairs;
    int baseline = -1;
    if (mse) {
        for (std::size_t i = 0; i < pairs.size(); ++i)
            if (pairs[i].first == DesignKind::C && pairs[i].second == DesignKind::C)
                baseline = static_cast<int>(i);
        if (baseline < 0) {
            baseline = static_cast<int>(pairs.size());
            pairs.push_back({DesignKind::C, DesignKind::C});
        }
    }
    if (pairs.empty()) throw Error(ErrorCategory::config, "no design pairs given");

    const bool want_equal =
        std::any_of(cfg.estimands.begin(), cfg.estimands.end(), [](const auto& e) {
            return e == "theta_p1" || e == "theta_s1";
        });
    const bool want_size =
        std::any_of(cfg.estimands.begin(), cfg.estimands.end(), [](const auto& e) {
            return e == "theta_p2" || e == "theta_s2";
        });

    // One run per (pair, weighting class); designs whose index does not
    // depend on the class need a single run. OLS analyses are size-class.
    struct Run {
        int pair;
        Weighting w;
    };
    std::vector<Run> runs;
    auto class_runs_for = [&](int pi) {
        const DesignPair& p = pairs[static_cast<std::size_t>(pi)];
        if (cfg.analysis == McAnalysis::ols_methods) {
            runs.push_back({pi, Weighting::size});
            return;
        }
        if (index_depends_on_weighting(p.first)) {
            if (want_equal) runs.push_back({pi, Weighting::equal});
            if (want_size) runs.push_back({pi, Weighting::size});
        } else {
            runs.push_back({pi, Weighting::equal});
        }
    };
    for (std::size_t i = 0; i < pairs.size(); ++i)
        class_runs_for(static_cast<int>(i));

    const int reps = cfg.replications;
    const std::size_t n_runs = runs.size();

    // Per-run, per-rep storage: four point estimates plus test outcomes.
    std::vector<std::vector<std::array<double, 4>>> thetas(
        n_runs, std::vector<std::array<double, 4>>(static_cast<std::size_t>(reps)));
    std::vector<std::vector<std::vector<uint8_t>>> rejects(
        n_runs, std::vector<std::vector<uint8_t>>(static_cast<std::size_t>(reps)));
    std::vector<std::string> test_names;  // filled from the first replication

    RepOptions ropts;
    ropts.run_tests = !mse;
    ropts.analysis = cfg.analysis;
    ropts.alpha = cfg.alpha;
    ropts.theta0 = cfg.theta0;

    std::mutex name_lock;
    const int n_workers = worker_count(cfg.threads);
    std::vector<std::thread> pool;
    std::atomic<int> next_rep{0};
    std::vector<std::string> worker_error(static_cast<std::size_t>(n_workers));

    auto work = [&](int wid) {
        try {
            for (;;) {
                const int rep = next_rep.fetch_add(1);
                if (rep >= reps) break;
                SimPopulation pop =
                    generate_population(cfg.dgp, static_cast<std::uint64_t>(rep));
                for (std::size_t r = 0; r < n_runs; ++r) {
                    auto res = simulate_one(pop, cfg.dgp, pairs[static_cast<std::size_t>(
                                                runs[r].pair)],
                                            runs[r].w, static_cast<std::uint64_t>(rep),
                                            ropts);
                    thetas[r][static_cast<std::size_t>(rep)] = {
                        res.pe.theta_p1, res.pe.theta_p2, res.pe.theta_s1,
                        res.pe.theta_s2};
                    rejects[r][static_cast<std::size_t>(rep)] = res.rejected;
                    if (!res.test_names.empty()) {
                        std::lock_guard<std::mutex> lk(name_lock);
                        if (test_names.empty()) test_names = res.test_names;
                    }
                }
            }
        } catch (const std::exception& e) {
            worker_error[static_cast<std::size_t>(wid)] = e.what();
        }
    };
    for (int wkr = 0; wkr < n_workers; ++wkr) pool.emplace_back(work, wkr);
    for (auto& t : pool) t.join();
    for (const auto& e : worker_error)
        if (!e.empty()) throw Error(ErrorCategory::numeric, "replication failed: " + e);

    auto estimand_slot = [](const std::string& e) {
        if (e == "theta_p1") return 0;
        if (e == "theta_p2") return 1;
        if (e == "theta_s1") return 2;
        if (e == "theta_s2") return 3;
        return -1;
    };
    auto run_for = [&](int pair_idx, const std::string& estimand) -> int {
        const bool size_class = estimand == "theta_p2" || estimand == "theta_s2";
        for (std::size_t r = 0; r < n_runs; ++r) {
            if (runs[r].pair != pair_idx) continue;
            if (!index_depends_on_weighting(
                    pairs[static_cast<std::size_t>(pair_idx)].first) ||
                cfg.analysis == McAnalysis::ols_methods)
                return static_cast<int>(r);
            if ((runs[r].w == Weighting::size) == size_class) return static_cast<int>(r);
        }
        return -1;
    };

    McTable table;
    table.kind = cfg.kind;
    table.replications = reps;

    if (mse) {
        TrueEstimands truth = true_estimands(cfg.dgp);
        const double tvals[4] = {truth.theta_p1, truth.theta_p2, truth.theta_s1,
                                 truth.theta_s2};
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            for (const auto& est : cfg.estimands) {
                const int slot = estimand_slot(est);
                if (slot < 0)
                    throw Error(ErrorCategory::config, "unknown estimand '" + est + "'");
                const int r = run_for(static_cast<int>(pi), est);
                const int rb = run_for(baseline, est);
                double ma = 0.0, mb = 0.0;
                for (int rep = 0; rep < reps; ++rep) {
                    const double da =
                        thetas[static_cast<std::size_t>(r)][static_cast<std::size_t>(rep)]
                              [static_cast<std::size_t>(slot)] - tvals[slot];
                    const double db =
                        thetas[static_cast<std::size_t>(rb)][static_cast<std::size_t>(rep)]
                              [static_cast<std::size_t>(slot)] - tvals[slot];
                    ma += da * da;
                    mb += db * db;
                }
                ma /= reps;
                mb /= reps;
                // Delta-method standard error for the paired ratio.
                double saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int rep = 0; rep < reps; ++rep) {
                    const double da =
                        thetas[static_cast<std::size_t>(r)][static_cast<std::size_t>(rep)]
                              [static_cast<std::size_t>(slot)] - tvals[slot];
                    const double db =
                        thetas[static_cast<std::size_t>(rb)][static_cast<std::size_t>(rep)]
                              [static_cast<std::size_t>(slot)] - tvals[slot];
                    saa += (da * da - ma) * (da * da - ma);
                    sbb += (db * db - mb) * (db * db - mb);
                    sab += (da * da - ma) * (db * db - mb);
                }
                const double rr = mb > 0.0 ? ma / mb : (ma > 0.0 ? HUGE_VAL : 1.0);
                double se = 0.0;
                if (reps > 1 && mb > 0.0) {
                    saa /= reps - 1;
                    sbb /= reps - 1;
                    sab /= reps - 1;
                    se = std::sqrt(std::max(
                             0.0, saa - 2.0 * rr * sab + rr * rr * sbb) /
                         reps) / mb;
                }
                table.cells.push_back({to_string(pairs[pi].first),
                                       to_string(pairs[pi].second), est, rr, se, ma});
            }
        }
    } else {
        // Rejection frequencies per requested estimand / test.
        std::vector<std::string> wanted;
        if (cfg.analysis == McAnalysis::adjusted_t) {
            wanted = cfg.estimands;
        } else {
            wanted = test_names;
        }
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            for (const auto& est : wanted) {
                int r;
                std::size_t test_idx = test_names.size();
                if (cfg.analysis == McAnalysis::adjusted_t) {
                    r = run_for(static_cast<int>(pi), est);
                } else {
                    r = run_for(static_cast<int>(pi), "theta_p2");
                }
                for (std::size_t ti = 0; ti < test_names.size(); ++ti)
                    if (test_names[ti] == est) test_idx = ti;
                if (test_idx == test_names.size())
                    throw Error(ErrorCategory::config, "unknown estimand '" + est + "'");
                double p = 0.0;
                for (int rep = 0; rep < reps; ++rep)
                    p += rejects[static_cast<std::size_t>(r)][static_cast<std::size_t>(
                        rep)][test_idx];
                p /= reps;
                const double se = std::sqrt(p * (1.0 - p) / reps);
                table.cells.push_back({to_string(pairs[pi].first),
                                       to_string(pairs[pi].second), est, p, se, 0.0});
            }
        }
    }
    return table;
}

}  // namespace twostage
