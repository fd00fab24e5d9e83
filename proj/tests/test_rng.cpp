#include <doctest.h>

#include <set>
#include <vector>

#include "twostage/rng.hpp"
#include "twostage/stats.hpp"

using namespace twostage;

TEST_CASE("streams are deterministic and distinct") {
    Philox a(42, 0), b(42, 0), c(42, 1), d(43, 0);
    std::vector<std::uint64_t> va, vb, vc, vd;
    for (int i = 0; i < 16; ++i) {
        va.push_back(a.next_u64());
        vb.push_back(b.next_u64());
        vc.push_back(c.next_u64());
        vd.push_back(d.next_u64());
    }
    CHECK(va == vb);
    CHECK(va != vc);
    CHECK(va != vd);
}

TEST_CASE("uniform01 range and mean") {
    Philox rng(7, 0);
    RunningMeanVar mv;
    for (int i = 0; i < 100000; ++i) {
        double u = rng.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        mv.add(u);
    }
    CHECK(mv.mean == doctest::Approx(0.5).epsilon(0.01));
    CHECK(mv.variance() == doctest::Approx(1.0 / 12).epsilon(0.05));
}

TEST_CASE("below is in range and covers all values") {
    Philox rng(9, 3);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        auto v = rng.below(7);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("normal moments") {
    Philox rng(11, 0);
    RunningMeanVar mv;
    for (int i = 0; i < 200000; ++i) mv.add(rng.normal());
    CHECK(mv.mean == doctest::Approx(0.0).epsilon(0.02));
    CHECK(mv.variance() == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("sample_without_replacement draws distinct in-range values") {
    Philox rng(5, 8);
    auto s = rng.sample_without_replacement(10, 4);
    REQUIRE(s.size() == 4);
    std::set<int> distinct(s.begin(), s.end());
    CHECK(distinct.size() == 4);
    for (int v : s) CHECK((v >= 0 && v < 10));
}

TEST_CASE("normal cdf and quantile invert each other") {
    for (double p : {0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999}) {
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
    }
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-8));
}
