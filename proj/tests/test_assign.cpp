#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "twostage/assign.hpp"
#include "twostage/errors.hpp"
#include "twostage/rng.hpp"

using namespace twostage;

TEST_CASE("match_tuples sorts by score and blocks adjacently") {
    std::vector<double> scores = {0.9, 0.1, 0.5, 0.3};
    auto res = match_tuples(scores, 2, 1, 7);
    REQUIRE(res.tuples.size() == 2);
    std::set<int> t0(res.tuples[0].begin(), res.tuples[0].end());
    std::set<int> t1(res.tuples[1].begin(), res.tuples[1].end());
    CHECK(t0 == std::set<int>{1, 3});  // scores 0.1, 0.3
    CHECK(t1 == std::set<int>{2, 0});  // scores 0.5, 0.9
    int treated0 = res.treated[1] + res.treated[3];
    int treated1 = res.treated[2] + res.treated[0];
    CHECK(treated0 == 1);
    CHECK(treated1 == 1);
    CHECK(res.tuple_scores[0] == doctest::Approx(0.2));
    CHECK(res.tuple_scores[1] == doctest::Approx(0.7));
}

TEST_CASE("triplet design: G=330, k=3, l=2") {
    std::vector<double> scores(330);
    Philox rng(3, 0);
    for (auto& s : scores) s = rng.uniform01();
    auto res = match_tuples(scores, 3, 2, 11);
    CHECK(res.tuples.size() == 110);
    int treated = 0;
    for (auto t : res.treated) treated += t;
    CHECK(treated == 220);
    for (const auto& tup : res.tuples) {
        int in_tuple = 0;
        for (int idx : tup) in_tuple += res.treated[static_cast<std::size_t>(idx)];
        CHECK(in_tuple == 2);
    }
}

TEST_CASE("indivisible cluster count names the remainder") {
    std::vector<double> scores(5, 0.0);
    CHECK_THROWS_WITH_AS((void)match_tuples(scores, 2, 1, 1),
                         doctest::Contains("not divisible by k"), Error);
    CHECK_THROWS_WITH_AS((void)match_tuples(scores, 2, 1, 1),
                         doctest::Contains("remainder 1"), Error);
}

TEST_CASE("within-tuple pattern frequencies are uniform over seeds") {
    std::vector<double> scores = {0.1, 0.2, 0.3, 0.4};
    int first_treated = 0;
    const int n_seeds = 10000;
    for (int s = 0; s < n_seeds; ++s) {
        auto res = match_tuples(scores, 2, 1, static_cast<std::uint64_t>(s));
        first_treated += res.treated[0] ? 1 : 0;
    }
    double freq = static_cast<double>(first_treated) / n_seeds;
    CHECK(freq > 0.48);
    CHECK(freq < 0.52);
}

TEST_CASE("exchangeability: permuting input order keeps tuple sets") {
    std::vector<double> scores = {0.9, 0.1, 0.5, 0.3, 0.7, 0.2};
    auto res = match_tuples(scores, 2, 1, 5);
    std::vector<double> permuted = {0.2, 0.5, 0.9, 0.3, 0.7, 0.1};
    // Map: permuted[i] corresponds to original index with the same score.
    auto res2 = match_tuples(permuted, 2, 1, 5);
    auto tuple_scores = [&](const MatchResult& r, const std::vector<double>& sc) {
        std::set<std::set<double>> sets;
        for (const auto& t : r.tuples) {
            std::set<double> one;
            for (int idx : t) one.insert(sc[static_cast<std::size_t>(idx)]);
            sets.insert(one);
        }
        return sets;
    };
    CHECK(tuple_scores(res, scores) == tuple_scores(res2, permuted));
}

TEST_CASE("matched tuples gaps shrink with sample size") {
    auto mean_gap = [](int g, std::uint64_t seed) {
        Philox rng(seed, 1);
        std::vector<double> scores(static_cast<std::size_t>(g));
        for (auto& s : scores) s = rng.uniform01();
        auto res = match_tuples(scores, 2, 1, seed);
        double total = 0.0;
        for (const auto& t : res.tuples) {
            double lo = scores[static_cast<std::size_t>(t[0])];
            double hi = scores[static_cast<std::size_t>(t[1])];
            total += std::abs(hi - lo);
        }
        return total / static_cast<double>(res.tuples.size());
    };
    double g100 = 0.0, g1000 = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        g100 += mean_gap(100, s);
        g1000 += mean_gap(1000, s);
    }
    CHECK(g1000 / 50 < g100 / 50);
}

TEST_CASE("stratified block counts and imbalance") {
    SUBCASE("one stratum of four, half treated") {
        auto t = stratified_block_assign({0, 0, 0, 0}, 1, 0.5, 3);
        CHECK(t[0] + t[1] + t[2] + t[3] == 2);
    }
    SUBCASE("stratum of five floors to two treated, imbalance -0.5") {
        auto t = stratified_block_assign({0, 0, 0, 0, 0}, 1, 0.5, 3);
        int n1 = 0;
        for (auto v : t) n1 += v;
        CHECK(n1 == 2);
        double d = 0.0;
        for (auto v : t) d += (v ? 1.0 : 0.0) - 0.5;
        CHECK(d == doctest::Approx(-0.5));
    }
    SUBCASE("quartile strata stay balanced within one unit") {
        Philox rng(17, 0);
        std::vector<double> idx;
        for (int i = 0; i < 200; ++i) {
            double c = rng.uniform01();
            int n = 50 + static_cast<int>(rng.below(101));
            idx.push_back(c + n / 100.0);
        }
        auto cuts = empirical_quantile_cuts(idx, 4);
        auto bins = bins_from_cutpoints(idx, cuts);
        auto treated = stratified_block_assign(bins, 4, 0.5, 23);
        std::map<int, double> d;
        for (std::size_t i = 0; i < bins.size(); ++i)
            d[bins[i]] += (treated[i] ? 1.0 : 0.0) - 0.5;
        for (const auto& [s, imbalance] : d) CHECK(std::abs(imbalance) <= 1.0);
    }
    SUBCASE("undersized stratum is rejected") {
        CHECK_THROWS_AS((void)stratified_block_assign({0, 0, 1}, 2, 0.5, 1), Error);
    }
}

TEST_CASE("complete randomization counts") {
    auto t = complete_randomize(200, 0.5, 9);
    int n1 = 0;
    for (auto v : t) n1 += v;
    CHECK(n1 == 100);

    auto t7 = complete_randomize(7, 1.0 / 3.0, 9);
    n1 = 0;
    for (auto v : t7) n1 += v;
    CHECK(n1 == 2);

    int ones = 0;
    for (int s = 0; s < 4000; ++s)
        ones += complete_randomize(2, 0.5, static_cast<std::uint64_t>(s))[0];
    double freq = ones / 4000.0;
    CHECK(freq > 0.46);
    CHECK(freq < 0.54);

    CHECK_THROWS_AS((void)complete_randomize(3, 0.1, 1), Error);
}

TEST_CASE("second stage treats floor(pi2 n) with matched pairs adjacency") {
    SUBCASE("two units, one treated") {
        SecondStageDesign d;
        d.mechanism = Mechanism::complete;
        d.pi2 = 0.5;
        Philox rng(4, 0);
        auto z = assign_second_stage_scores({0.3, 0.8}, d, rng);
        CHECK(z[0] + z[1] == 1);
    }
    SUBCASE("a hundred units, fifty treated, one per adjacent pair") {
        Philox gen(12, 0);
        std::vector<double> scores(100);
        for (auto& s : scores) s = gen.normal() / (gen.uniform01() + 0.1);
        SecondStageDesign d;
        d.mechanism = Mechanism::matched_tuples;
        d.pi2 = 0.5;
        Philox rng(4, 1);
        auto z = assign_second_stage_scores(scores, d, rng);
        int total = 0;
        for (int v : z) total += v;
        CHECK(total == 50);
        std::vector<int> order(100);
        for (int i = 0; i < 100; ++i) order[static_cast<std::size_t>(i)] = i;
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return scores[a] < scores[b]; });
        for (int p = 0; p < 50; ++p) {
            int a = order[static_cast<std::size_t>(2 * p)];
            int b = order[static_cast<std::size_t>(2 * p + 1)];
            CHECK(z[static_cast<std::size_t>(a)] + z[static_cast<std::size_t>(b)] == 1);
        }
    }
    SUBCASE("cluster too small to treat errors") {
        SecondStageDesign d;
        d.mechanism = Mechanism::complete;
        d.pi2 = 0.4;
        Philox rng(4, 2);
        CHECK_THROWS_AS((void)assign_second_stage_scores({1.0, 2.0}, d, rng), Error);
    }
}

TEST_CASE("sbr group floors rebalance to the cluster target") {
    // Six units split 3 / 3: each group floors to 1, the target is 3.
    SecondStageDesign d;
    d.mechanism = Mechanism::sbr;
    d.n_strata = 2;
    d.pi2 = 0.5;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Philox rng(seed, 0);
        auto z = assign_second_stage_scores({1, 2, 3, 10, 20, 30}, d, rng);
        int total = 0;
        for (int v : z) total += v;
        CHECK(total == 3);
    }
}

TEST_CASE("tied scores reproduce the complete-randomization law") {
    // Four tied units under matched pairs: all six balanced patterns must
    // be equally likely, exactly as under complete randomization.
    SecondStageDesign mt;
    mt.mechanism = Mechanism::matched_tuples;
    mt.pi2 = 0.5;
    std::map<std::pair<int, int>, int> counts;
    const int n_seeds = 30000;
    for (int s = 0; s < n_seeds; ++s) {
        Philox rng(101, static_cast<std::uint64_t>(s));
        auto z = assign_second_stage_scores({1.0, 1.0, 1.0, 1.0}, mt, rng);
        std::vector<int> treated;
        for (int i = 0; i < 4; ++i)
            if (z[static_cast<std::size_t>(i)]) treated.push_back(i);
        REQUIRE(treated.size() == 2);
        counts[{treated[0], treated[1]}]++;
    }
    REQUIRE(counts.size() == 6);
    for (const auto& [pat, c] : counts) {
        double freq = static_cast<double>(c) / n_seeds;
        CHECK(freq > 1.0 / 6 - 0.012);
        CHECK(freq < 1.0 / 6 + 0.012);
    }
}

TEST_CASE("panel-facing second stage requires the full roster") {
    ClusterRecord cl;
    cl.cluster_id = "a";
    cl.n_g = 3;
    cl.h = 0.5;
    cl.units.resize(2);
    SecondStageDesign d;
    d.mechanism = Mechanism::complete;
    d.pi2 = 0.5;
    CHECK_THROWS_AS((void)assign_second_stage(cl, d, 1), Error);
}

TEST_CASE("assignment is deterministic given the seed") {
    std::vector<double> scores(40);
    Philox gen(2, 5);
    for (auto& s : scores) s = gen.uniform01();
    auto a = match_tuples(scores, 4, 1, 77);
    auto b = match_tuples(scores, 4, 1, 77);
    CHECK(a.treated == b.treated);
    CHECK(a.tuples == b.tuples);
    auto c = match_tuples(scores, 4, 1, 78);
    CHECK(a.treated != c.treated);
}

TEST_CASE("pi1 conflicts with l/k are rejected") {
    FirstStageDesign d;
    d.mechanism = Mechanism::matched_tuples;
    d.k = 3;
    d.l = 2;
    CHECK(resolved_pi1(d) == doctest::Approx(2.0 / 3));
    d.pi1 = 0.5;
    CHECK_THROWS_AS((void)resolved_pi1(d), Error);
    FirstStageDesign s;
    s.mechanism = Mechanism::sbr;
    CHECK_THROWS_AS((void)resolved_pi1(s), Error);
    s.pi1 = 0.25;
    CHECK(resolved_pi1(s) == doctest::Approx(0.25));
}
