#include "twostage/assign.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "twostage/errors.hpp"

namespace twostage {

Mechanism mechanism_from_string(const std::string& s) {
    if (s == "complete") return Mechanism::complete;
    if (s == "sbr") return Mechanism::sbr;
    if (s == "matched_tuples") return Mechanism::matched_tuples;
    throw Error(ErrorCategory::config, "unknown mechanism '" + s + "'");
}

std::string to_string(Mechanism m) {
    switch (m) {
        case Mechanism::complete: return "complete";
        case Mechanism::sbr: return "sbr";
        case Mechanism::matched_tuples: return "matched_tuples";
    }
    return "?";
}

double resolved_pi1(const FirstStageDesign& d) {
    if (d.mechanism == Mechanism::matched_tuples) {
        double ratio = static_cast<double>(d.l) / d.k;
        if (d.pi1 && std::abs(*d.pi1 - ratio) > 1e-9)
            throw Error(ErrorCategory::config,
                        "pi1 = " + std::to_string(*d.pi1) +
                            " conflicts with l/k = " + std::to_string(ratio));
        return ratio;
    }
    if (!d.pi1)
        throw Error(ErrorCategory::config,
                    "pi1 is required for " + to_string(d.mechanism) + " designs");
    return *d.pi1;
}

MatchResult match_tuples_with(const std::vector<double>& scores, int k, int l,
                              Philox& rng) {
    const int g = static_cast<int>(scores.size());
    if (k < 2 || l < 1 || l >= k)
        throw Error(ErrorCategory::config,
                    "matched tuples need k >= 2 and 0 < l < k (k = " +
                        std::to_string(k) + ", l = " + std::to_string(l) + ")");
    if (g % k != 0)
        throw Error(ErrorCategory::validation,
                    "cluster count " + std::to_string(g) +
                        " is not divisible by k = " + std::to_string(k) +
                        " (remainder " + std::to_string(g % k) + ")");

    std::vector<int> order(static_cast<std::size_t>(g));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] < scores[b]; });

    MatchResult res;
    res.treated.assign(static_cast<std::size_t>(g), 0);
    const int n = g / k;
    res.tuples.reserve(static_cast<std::size_t>(n));
    res.tuple_scores.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        std::vector<int> tup(order.begin() + static_cast<std::ptrdiff_t>(j) * k,
                             order.begin() + static_cast<std::ptrdiff_t>(j + 1) * k);
        double mean = 0.0;
        for (int idx : tup) mean += scores[idx];
        res.tuple_scores.push_back(mean / k);
        // Permuted-block draw: a uniform size-l subset of the tuple.
        std::vector<int> pick = rng.sample_without_replacement(k, l);
        for (int p : pick) res.treated[static_cast<std::size_t>(tup[p])] = 1;
        res.tuples.push_back(std::move(tup));
    }
    return res;
}

MatchResult match_tuples(const std::vector<double>& scores, int k, int l,
                         std::uint64_t rng_seed) {
    Philox rng(rng_seed, 0);
    return match_tuples_with(scores, k, l, rng);
}

std::vector<uint8_t> stratified_block_assign_with(const std::vector<int>& strata,
                                                  int n_strata, double pi1,
                                                  Philox& rng) {
    if (!(pi1 > 0.0 && pi1 < 1.0))
        throw Error(ErrorCategory::config, "pi1 must lie in (0,1)");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(n_strata));
    for (std::size_t i = 0; i < strata.size(); ++i) {
        if (strata[i] < 0 || strata[i] >= n_strata)
            throw Error(ErrorCategory::validation,
                        "stratum label out of range at position " + std::to_string(i));
        members[static_cast<std::size_t>(strata[i])].push_back(static_cast<int>(i));
    }
    std::vector<uint8_t> treated(strata.size(), 0);
    for (int s = 0; s < n_strata; ++s) {
        auto& m = members[static_cast<std::size_t>(s)];
        if (m.size() < 2)
            throw Error(ErrorCategory::validation,
                        "stratum " + std::to_string(s) + " has " +
                            std::to_string(m.size()) +
                            " cluster(s); at least 2 are required");
        int take = static_cast<int>(
            std::floor(pi1 * static_cast<double>(m.size()) + 1e-9));
        std::vector<int> pick =
            rng.sample_without_replacement(static_cast<int>(m.size()), take);
        for (int p : pick) treated[static_cast<std::size_t>(m[static_cast<std::size_t>(p)])] = 1;
    }
    return treated;
}

std::vector<uint8_t> stratified_block_assign(const std::vector<int>& strata,
                                             int n_strata, double pi1,
                                             std::uint64_t rng_seed) {
    Philox rng(rng_seed, 0);
    return stratified_block_assign_with(strata, n_strata, pi1, rng);
}

std::vector<uint8_t> complete_randomize_with(int g, double pi1, Philox& rng) {
    int take = static_cast<int>(std::floor(pi1 * g + 1e-9));
    if (take < 1)
        throw Error(ErrorCategory::validation,
                    "floor(pi1 * G) = 0: nothing to treat (G = " + std::to_string(g) +
                        ", pi1 = " + std::to_string(pi1) + ")");
    std::vector<uint8_t> treated(static_cast<std::size_t>(g), 0);
    for (int p : rng.sample_without_replacement(g, take))
        treated[static_cast<std::size_t>(p)] = 1;
    return treated;
}

std::vector<uint8_t> complete_randomize(int g, double pi1, std::uint64_t rng_seed) {
    Philox rng(rng_seed, 0);
    return complete_randomize_with(g, pi1, rng);
}

std::vector<double> empirical_quantile_cuts(std::vector<double> values, int n_bins) {
    std::sort(values.begin(), values.end());
    std::vector<double> cuts;
    const std::size_t n = values.size();
    for (int j = 1; j < n_bins; ++j) {
        std::size_t idx = static_cast<std::size_t>(
            std::ceil(static_cast<double>(j) * static_cast<double>(n) / n_bins));
        if (idx == 0) idx = 1;
        cuts.push_back(values[std::min(idx, n) - 1]);
    }
    return cuts;
}

std::vector<int> bins_from_cutpoints(const std::vector<double>& values,
                                     const std::vector<double>& cuts) {
    std::vector<int> bins(values.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        int b = 0;
        for (double c : cuts) b += values[i] > c ? 1 : 0;
        bins[i] = b;
    }
    return bins;
}

int densify_labels(const std::vector<std::string>& labels, std::vector<int>& out) {
    std::map<std::string, int> ids;
    out.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, fresh] = ids.emplace(labels[i], static_cast<int>(ids.size()));
        (void)fresh;
        out[i] = it->second;
    }
    return static_cast<int>(ids.size());
}

void derive_tuple_shape(double fraction, int& k, int& l) {
    for (int kk = 2; kk <= 64; ++kk) {
        int ll = static_cast<int>(std::lround(fraction * kk));
        if (ll >= 1 && ll < kk &&
            std::abs(static_cast<double>(ll) / kk - fraction) < 1e-9) {
            k = kk;
            l = ll;
            return;
        }
    }
    throw Error(ErrorCategory::config,
                "cannot express treated fraction " + std::to_string(fraction) +
                    " as l/k with k <= 64; set k and l explicitly");
}

std::vector<int> assign_within_groups(int n, const std::vector<std::vector<int>>& groups,
                                      double pi2, Philox& rng) {
    const long long total =
        static_cast<long long>(std::floor(pi2 * static_cast<double>(n) + 1e-9));
    if (total < 1)
        throw Error(ErrorCategory::validation,
                    "cluster too small to treat any unit (n = " + std::to_string(n) +
                        ", pi2 = " + std::to_string(pi2) + ")");

    std::vector<int> z(static_cast<std::size_t>(n), 0);
    long long assigned = 0;
    std::vector<int> can_take;  // groups with an untreated unit left
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& grp = groups[gi];
        if (grp.empty()) continue;
        int take = static_cast<int>(
            std::floor(pi2 * static_cast<double>(grp.size()) + 1e-9));
        for (int p : rng.sample_without_replacement(static_cast<int>(grp.size()), take))
            z[static_cast<std::size_t>(grp[static_cast<std::size_t>(p)])] = 1;
        assigned += take;
        if (take < static_cast<int>(grp.size())) can_take.push_back(static_cast<int>(gi));
    }

    // Rebalance: per-group floors can undershoot the cluster target; treat
    // one extra unit in each of (total - assigned) distinct groups.
    long long deficit = total - assigned;
    if (deficit > 0) {
        if (deficit > static_cast<long long>(can_take.size()))
            throw Error(ErrorCategory::numeric, "second-stage rebalancing deficit "
                                                "exceeds available groups");
        auto chosen = rng.sample_without_replacement(static_cast<int>(can_take.size()),
                                                     static_cast<int>(deficit));
        for (int ci : chosen) {
            const auto& grp = groups[static_cast<std::size_t>(
                can_take[static_cast<std::size_t>(ci)])];
            std::vector<int> untreated;
            for (int idx : grp)
                if (!z[static_cast<std::size_t>(idx)]) untreated.push_back(idx);
            int pick = static_cast<int>(rng.below(untreated.size()));
            z[static_cast<std::size_t>(untreated[static_cast<std::size_t>(pick)])] = 1;
        }
    }
    return z;
}

std::vector<int> assign_second_stage_scores(const std::vector<double>& unit_scores,
                                            const SecondStageDesign& design,
                                            Philox& rng, std::vector<int>* group_out) {
    const int n = static_cast<int>(unit_scores.size());

    // Random tie order: scores are ranked with a random permutation as the
    // secondary key, so identical scores carry no positional information.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return unit_scores[a] < unit_scores[b];
    });

    // Group membership per the mechanism, in sorted order.
    std::vector<std::vector<int>> groups;
    switch (design.mechanism) {
        case Mechanism::complete: {
            groups.push_back(order);
            break;
        }
        case Mechanism::sbr: {
            auto cuts = empirical_quantile_cuts(unit_scores, design.n_strata);
            auto bins = bins_from_cutpoints(unit_scores, cuts);
            groups.assign(static_cast<std::size_t>(design.n_strata), {});
            for (int idx : order)
                groups[static_cast<std::size_t>(bins[static_cast<std::size_t>(idx)])]
                    .push_back(idx);
            break;
        }
        case Mechanism::matched_tuples: {
            int k = design.k.value_or(0), l = design.l.value_or(0);
            if (k <= 0) derive_tuple_shape(design.pi2, k, l);
            // The remainder units form their own group and must be a
            // uniform subset: carving them off one end of the score order
            // would give the extreme units a different treatment
            // probability than everyone else.
            const int r = n % k;
            std::vector<int> remainder;
            if (r > 0) {
                std::vector<uint8_t> removed(static_cast<std::size_t>(n), 0);
                for (int p : rng.sample_without_replacement(n, r)) {
                    removed[static_cast<std::size_t>(p)] = 1;
                    remainder.push_back(p);
                }
                std::vector<int> kept;
                kept.reserve(static_cast<std::size_t>(n - r));
                for (int idx : order)
                    if (!removed[static_cast<std::size_t>(idx)]) kept.push_back(idx);
                order = std::move(kept);
            }
            for (int start = 0; start < static_cast<int>(order.size()); start += k)
                groups.emplace_back(order.begin() + start, order.begin() + start + k);
            if (!remainder.empty()) groups.push_back(std::move(remainder));
            break;
        }
    }

    if (group_out) {
        group_out->assign(static_cast<std::size_t>(n), -1);
        for (std::size_t gi = 0; gi < groups.size(); ++gi)
            for (int idx : groups[gi])
                (*group_out)[static_cast<std::size_t>(idx)] = static_cast<int>(gi);
    }
    return assign_within_groups(n, groups, design.pi2, rng);
}

std::vector<int> assign_second_stage(const ClusterRecord& cluster,
                                     const SecondStageDesign& design,
                                     std::uint64_t rng_seed) {
    if (static_cast<int>(cluster.units.size()) != cluster.n_g)
        throw Error(ErrorCategory::validation,
                    "cluster " + cluster.cluster_id + " has " +
                        std::to_string(cluster.units.size()) + " unit rows but n_g = " +
                        std::to_string(cluster.n_g) +
                        "; second-stage assignment needs the full roster");

    std::vector<double> scores(cluster.units.size(), 0.0);
    if (design.score.kind == ScoreSource::Kind::column && !design.score.name.empty()) {
        if (design.score.name.rfind("x_", 0) != 0)
            throw Error(ErrorCategory::config,
                        "second-stage score column must be x_<j>, got '" +
                            design.score.name + "'");
        std::size_t col = static_cast<std::size_t>(
                              std::stoi(design.score.name.substr(2))) - 1;
        for (std::size_t i = 0; i < cluster.units.size(); ++i) {
            if (col >= cluster.units[i].x.size())
                throw Error(ErrorCategory::validation,
                            "cluster " + cluster.cluster_id + " unit " +
                                cluster.units[i].unit_id + " lacks column " +
                                design.score.name);
            scores[i] = cluster.units[i].x[col];
        }
    } else if (design.mechanism == Mechanism::sbr) {
        // Labels in b_g act as the strata when no score is given.
        bool have_labels = false;
        for (const auto& u : cluster.units)
            have_labels = have_labels || !u.second_stage_stratum.empty();
        if (have_labels) {
            std::vector<std::string> labels;
            labels.reserve(cluster.units.size());
            for (const auto& u : cluster.units) labels.push_back(u.second_stage_stratum);
            std::vector<int> dense;
            int nb = densify_labels(labels, dense);
            std::vector<std::vector<int>> groups(static_cast<std::size_t>(nb));
            for (std::size_t i = 0; i < dense.size(); ++i)
                groups[static_cast<std::size_t>(dense[i])].push_back(static_cast<int>(i));
            Philox rng(rng_seed, 0);
            return assign_within_groups(static_cast<int>(cluster.units.size()), groups,
                                        design.pi2, rng);
        }
    }

    Philox rng(rng_seed, 0);
    return assign_second_stage_scores(scores, design, rng);
}

TupleStructure to_tuple_structure(const MatchResult& m,
                                  const std::vector<std::string>& cluster_ids,
                                  int k, int l) {
    TupleStructure ts;
    ts.k = k;
    ts.l = l;
    ts.mode = StrataMode::small_strata;
    ts.tuple_scores = m.tuple_scores;
    ts.tuples.reserve(m.tuples.size());
    for (const auto& tup : m.tuples) {
        std::vector<std::string> ids;
        ids.reserve(tup.size());
        for (int idx : tup) ids.push_back(cluster_ids[static_cast<std::size_t>(idx)]);
        ts.tuples.push_back(std::move(ids));
    }
    return ts;
}

}  // namespace twostage
