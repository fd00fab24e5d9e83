#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twostage/rng.hpp"
#include "twostage/types.hpp"

namespace twostage {

enum class Mechanism { complete, sbr, matched_tuples };

Mechanism mechanism_from_string(const std::string& s);
std::string to_string(Mechanism m);

// Where a matching / stratification score comes from: a covariate column
// (c_j for clusters, x_j for units) or a named built-in index.
struct ScoreSource {
    enum class Kind { column, index } kind = Kind::column;
    std::string name;  // e.g. "c_1", "x_2", "index_equal", "index_size"
};

struct FirstStageDesign {
    Mechanism mechanism = Mechanism::matched_tuples;
    int k = 2;
    int l = 1;
    // Required for complete / sbr; matched tuples derive l/k and reject a
    // conflicting explicit value.
    std::optional<double> pi1;
    ScoreSource score;
    int n_strata = 2;  // sbr quantile cuts
};

struct SecondStageDesign {
    Mechanism mechanism = Mechanism::complete;
    double pi2 = 0.5;
    ScoreSource score;
    int n_strata = 2;
    // Tuple shape for matched_tuples; derived from pi2 when absent.
    std::optional<int> k;
    std::optional<int> l;
};

double resolved_pi1(const FirstStageDesign& d);

struct MatchResult {
    std::vector<std::vector<int>> tuples;  // cluster indices, score order
    std::vector<double> tuple_scores;      // mean score per tuple
    std::vector<uint8_t> treated;          // per cluster
};

// Sorts clusters by score (ties keep input order), blocks consecutive runs
// of k into tuples, and treats a uniformly chosen size-l subset per tuple.
// Requires count divisible by k.
MatchResult match_tuples(const std::vector<double>& scores, int k, int l,
                         std::uint64_t rng_seed);
MatchResult match_tuples_with(const std::vector<double>& scores, int k, int l,
                              Philox& rng);

// Exactly floor(pi1 * size(stratum)) treated within each stratum, chosen
// uniformly. Strata given as dense labels 0..n_strata-1.
std::vector<uint8_t> stratified_block_assign(const std::vector<int>& strata,
                                             int n_strata, double pi1,
                                             std::uint64_t rng_seed);
std::vector<uint8_t> stratified_block_assign_with(const std::vector<int>& strata,
                                                  int n_strata, double pi1,
                                                  Philox& rng);

// Exactly floor(pi1 * g) treated, uniform over subsets.
std::vector<uint8_t> complete_randomize(int g, double pi1, std::uint64_t rng_seed);
std::vector<uint8_t> complete_randomize_with(int g, double pi1, Philox& rng);

// Core second-stage draw over explicit groups: each group treats
// floor(pi2 * |group|) units uniformly, then a rebalancing pass tops the
// total up to floor(pi2 * n) by treating one extra unit in distinct
// uniformly chosen groups.
std::vector<int> assign_within_groups(int n, const std::vector<std::vector<int>>& groups,
                                      double pi2, Philox& rng);

// Within-cluster assignment for a treated cluster: units are grouped by the
// design (quantile bins for sbr, score-adjacent blocks for matched tuples,
// one group for complete). Score ties are ordered randomly from the same
// stream, so fully tied scores reproduce the complete-randomization law.
std::vector<int> assign_second_stage_scores(const std::vector<double>& unit_scores,
                                            const SecondStageDesign& design,
                                            Philox& rng,
                                            std::vector<int>* group_out = nullptr);

// Panel-facing wrapper: scores resolved from design.score (x_j column) or
// from explicit b_g labels when design.mechanism == sbr and scores are
// absent. Returns z aligned with cluster.units; requires the full roster
// (units.size() == n_g).
std::vector<int> assign_second_stage(const ClusterRecord& cluster,
                                     const SecondStageDesign& design,
                                     std::uint64_t rng_seed);

// Quantile helpers shared by the designs. Cuts are the j/n_bins empirical
// quantiles (inverted-CDF convention); bin(x) counts cuts strictly below x,
// so tied values always share a bin and duplicate cuts collapse bins.
std::vector<double> empirical_quantile_cuts(std::vector<double> values, int n_bins);
std::vector<int> bins_from_cutpoints(const std::vector<double>& values,
                                     const std::vector<double>& cuts);

// Dense re-labeling of arbitrary string labels; returns the number of strata.
int densify_labels(const std::vector<std::string>& labels, std::vector<int>& out);

// Smallest k <= 64 with l/k equal to the treated fraction (1e-9 tolerance).
void derive_tuple_shape(double fraction, int& k, int& l);

TupleStructure to_tuple_structure(const MatchResult& m,
                                  const std::vector<std::string>& cluster_ids,
                                  int k, int l);

}  // namespace twostage
