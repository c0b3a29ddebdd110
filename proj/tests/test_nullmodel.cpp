#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"

#include "impact/error.hpp"
#include "impact/nullmodel.hpp"
#include "impact/rng.hpp"
#include "impact/synth.hpp"
#include "helpers.hpp"
#include "scenarios.hpp"

using namespace impact;
using impact::testing::hand_tape;
using impact::testing::Row;

namespace {

std::vector<std::int64_t> trigger_ids(const Tape& tape) {
    std::vector<std::int64_t> out;
    for (const auto& t : tape.trades()) out.push_back(to_int(t.trigger_id));
    return out;
}

Tape small_market() {
    std::vector<Row> rows;
    Rng rng(5);
    for (int t = 0; t < 60; ++t) {
        const int eps = rng.coin() ? 1 : -1;
        rows.push_back({1 + static_cast<std::int64_t>(rng.below(3)), eps, 1.0 + rng.below(9), 0.0, 0.2 * eps});
    }
    return hand_tape(rows);
}

}  // namespace

TEST_CASE("shuffling a one-firm tape changes nothing") {
    const Tape tape = hand_tape({{4, 1, 2.0, 0.0, 1.0}, {4, -1, 3.0, 1.0, 0.0}, {4, 1, 1.0, 0.0, 0.5}});
    const Tape shuffled = shuffle_ids(tape, 99);
    CHECK(testing::processed_text(shuffled) == testing::processed_text(tape));
}

TEST_CASE("shuffling draws every assignment with equal probability") {
    const Tape tape = hand_tape({{1, 1, 1, 0, 1}, {1, 1, 1, 1, 2}, {2, -1, 1, 2, 1}, {2, -1, 1, 1, 0}});
    std::map<std::vector<std::int64_t>, int> counts;
    const int draws = 6000;
    for (int s = 0; s < draws; ++s) ++counts[trigger_ids(shuffle_ids(tape, derive_seed(77, s)))];
    REQUIRE(counts.size() == 6);
    double chi2 = 0.0;
    const double expected = draws / 6.0;
    for (const auto& [ids, n] : counts) {
        CHECK(std::count(ids.begin(), ids.end(), 1) == 2);
        chi2 += (n - expected) * (n - expected) / expected;
    }
    // 99.9th percentile of chi-square with 5 degrees of freedom.
    CHECK(chi2 < 20.52);
}

TEST_CASE("shuffling preserves participation and every other field") {
    const Tape tape = small_market();
    const Tape shuffled = shuffle_ids(tape, 3);
    REQUIRE(shuffled.size() == tape.size());
    for (const FirmId f : tape.firms()) CHECK(shuffled.participation(f) == tape.participation(f));
    bool moved = false;
    for (std::size_t t = 0; t < tape.size(); ++t) {
        const auto& a = tape.trades()[t];
        const auto& b = shuffled.trades()[t];
        CHECK(a.tick == b.tick);
        CHECK(a.sign == b.sign);
        CHECK(a.volume == b.volume);
        CHECK(a.quote_before == b.quote_before);
        CHECK(a.quote_after == b.quote_after);
        moved = moved || a.trigger_id != b.trigger_id;
    }
    CHECK(moved);
    CHECK(shuffled.mean_spread() == tape.mean_spread());
    for (const FirmId f : shuffled.firms()) {
        for (const auto t : shuffled.ticks_of(f)) CHECK(shuffled.trades()[t].trigger_id == f);
    }
}

TEST_CASE("shuffling is deterministic in the seed") {
    const Tape tape = small_market();
    CHECK(trigger_ids(shuffle_ids(tape, 11)) == trigger_ids(shuffle_ids(tape, 11)));
    CHECK(trigger_ids(shuffle_ids(tape, 11)) != trigger_ids(shuffle_ids(tape, 12)));
}

TEST_CASE("null band bookkeeping on a hand estimator") {
    const Tape tape = small_market();
    // Share of the firm's trades that are buys: a cheap statistic that moves under shuffling.
    const ExponentEstimator buys = [](const Tape& t, Scope scope) {
        if (scope.is_market()) return 0.5;
        const auto ticks = t.ticks_of(*scope.firm);
        double n = 0.0;
        for (const auto k : ticks) n += t.signs()[k] > 0 ? 1.0 : 0.0;
        return n / static_cast<double>(ticks.size());
    };
    const std::vector<FirmId> firms{firm_id(1), firm_id(2), firm_id(3)};
    const auto report = null_band(tape, 5, 8, buys, firms);
    CHECK(report.warnings.size() == 1);
    CHECK(report.n_evaluated == 3);
    CHECK(report.rng == std::string(Rng::algorithm));
    double pooled = 0.0;
    for (const auto& band : report.firms) {
        REQUIRE(band.alpha_shuffled.size() == 5);
        for (const double a : band.alpha_shuffled) pooled += a;
        const bool inside = std::abs(*band.alpha_real - band.mean) <= band.stdev;
        CHECK(band.inside_firm_band == inside);
    }
    CHECK(report.pooled_mean == doctest::Approx(pooled / 15.0).epsilon(1e-14));
    const auto again = null_band(tape, 5, 8, buys, firms);
    CHECK(again.pooled_std == report.pooled_std);
    CHECK_THROWS_AS(null_band(tape, 0, 8, buys, firms), ConfigError);
}

TEST_CASE("estimator failures on a tiny firm are reported, not fatal") {
    std::vector<Row> rows;
    Rng rng(9);
    for (int t = 0; t < 4000; ++t) {
        const int eps = rng.coin() ? 1 : -1;
        const double v = 1.0 + 50.0 * rng.uniform();
        rows.push_back({t % 500 == 0 ? 2 : 1, eps, v, 0.0, eps * 0.3 * std::pow(v, 0.3)});
    }
    const Tape tape = hand_tape(rows);
    const auto est = impact_exponent_estimator(Binning{10, 20, false});
    const std::vector<FirmId> firms{firm_id(1), firm_id(2)};
    const auto report = null_band(tape, 3, 1, est, firms);
    CHECK_FALSE(report.failures.empty());
    REQUIRE(report.firms.size() == 2);
    CHECK(report.firms[0].alpha_real.has_value());
    CHECK(report.firms[0].alpha_real.value() == doctest::Approx(0.3).epsilon(1e-3));
    CHECK_FALSE(report.firms[1].alpha_real.has_value());
    CHECK(report.n_evaluated == 1);
}

TEST_CASE("shuffled exponents centre on the market exponent") {
    const auto m = scenarios::exponent_ensemble(true, 5, 200000, 21, 0.5);
    const auto synth = generate(m);
    const auto est = impact_exponent_estimator();
    const auto small = null_band(synth.tape, 10, 4, est);
    const auto large = null_band(synth.tape, 100, 4, est);
    REQUIRE(large.n_evaluated == 5);
    // Replicates reuse one tape, so the firms are the independent units.
    const double se = large.pooled_std / std::sqrt(static_cast<double>(large.n_evaluated));
    CHECK(std::abs(large.pooled_mean - large.alpha_market) <= 2.0 * se);
    CHECK(std::abs(small.pooled_std / large.pooled_std - 1.0) < 0.2);
}
