#include "impact/nullmodel.hpp"

#include <cmath>

#include "impact/error.hpp"
#include "impact/format.hpp"
#include "impact/rng.hpp"

namespace impact {

Tape shuffle_ids(const Tape& tape, std::uint64_t seed) {
    std::vector<FirmId> ids;
    ids.reserve(tape.size());
    for (const auto& t : tape.trades()) ids.push_back(t.trigger_id);
    Rng rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(ids[i - 1], ids[j]);
    }
    return tape.with_triggers(ids);
}

ExponentEstimator impact_exponent_estimator(Binning binning, std::optional<FitWindow> window) {
    return [binning, window](const Tape& tape, Scope scope) {
        return fit_power_law(impact_curve(tape, scope, binning), window).exponent;
    };
}

namespace {

struct Spread {
    double mean = 0.0;
    double stdev = 0.0;
};

Spread spread_of(const std::vector<double>& v) {
    Spread s;
    if (v.empty()) return s;
    for (const double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() < 2) return s;
    double ss = 0.0;
    for (const double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    return s;
}

}  // namespace

ShuffleReport null_band(const Tape& tape, std::size_t n_replicates, std::uint64_t seed,
                        const ExponentEstimator& estimator, std::optional<std::vector<FirmId>> firms) {
    if (n_replicates < 1) throw ConfigError("null band needs at least one replicate");
    ShuffleReport report;
    report.seed = seed;
    report.rng = std::string(Rng::algorithm);
    report.n_replicates = n_replicates;
    if (n_replicates < 10) report.warnings.push_back("fewer than 10 replicates: band is not reliable");

    const std::vector<FirmId> ids = firms ? *firms : tape.eligible_firms();
    if (ids.empty()) {
        report.warnings.push_back("no firms to evaluate");
        return report;
    }
    report.alpha_market = estimator(tape, Scope::market());

    for (const FirmId id : ids) {
        FirmBand band;
        band.firm = id;
        band.n_trades = tape.trade_count(id);
        try {
            band.alpha_real = estimator(tape, Scope::of(id));
        } catch (const Error& e) {
            report.failures.push_back("real tape, firm " + std::to_string(to_int(id)) + ": " + e.what());
        }
        report.firms.push_back(std::move(band));
    }

    for (std::size_t r = 0; r < n_replicates; ++r) {
        const Tape shuffled = shuffle_ids(tape, derive_seed(seed, r));
        for (auto& band : report.firms) {
            try {
                band.alpha_shuffled.push_back(estimator(shuffled, Scope::of(band.firm)));
            } catch (const Error& e) {
                ++band.failures;
                report.failures.push_back("replicate " + std::to_string(r) + ", firm " +
                                          std::to_string(to_int(band.firm)) + ": " + e.what());
            }
        }
    }

    std::vector<double> pooled;
    for (auto& band : report.firms) {
        const Spread s = spread_of(band.alpha_shuffled);
        band.mean = s.mean;
        band.stdev = s.stdev;
        pooled.insert(pooled.end(), band.alpha_shuffled.begin(), band.alpha_shuffled.end());
    }
    const Spread p = spread_of(pooled);
    report.pooled_mean = p.mean;
    report.pooled_std = p.stdev;

    std::size_t outside_pooled = 0;
    std::size_t outside_firm = 0;
    for (auto& band : report.firms) {
        if (!band.alpha_real || band.alpha_shuffled.size() < 2) continue;
        ++report.n_evaluated;
        band.inside_firm_band = std::abs(*band.alpha_real - band.mean) <= band.stdev;
        band.inside_pooled_band = std::abs(*band.alpha_real - report.pooled_mean) <= report.pooled_std;
        if (!band.inside_firm_band) ++outside_firm;
        if (!band.inside_pooled_band) ++outside_pooled;
    }
    if (report.n_evaluated > 0) {
        report.exceedance_pooled = static_cast<double>(outside_pooled) / static_cast<double>(report.n_evaluated);
        report.exceedance_firm = static_cast<double>(outside_firm) / static_cast<double>(report.n_evaluated);
    }
    return report;
}

}  // namespace impact
