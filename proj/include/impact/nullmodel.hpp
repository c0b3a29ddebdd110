#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impact/fit.hpp"
#include "impact/measure.hpp"
#include "impact/tape.hpp"

namespace impact {

// Copy of the tape with the trigger ids permuted uniformly over the trade slots.
Tape shuffle_ids(const Tape& tape, std::uint64_t seed);

// Maps a tape and a scope to an impact exponent; may throw on tiny samples.
using ExponentEstimator = std::function<double(const Tape&, Scope)>;

ExponentEstimator impact_exponent_estimator(Binning binning = {}, std::optional<FitWindow> window = std::nullopt);

struct FirmBand {
    FirmId firm{};
    std::size_t n_trades = 0;
    std::optional<double> alpha_real;
    std::vector<double> alpha_shuffled;
    double mean = 0.0;
    double stdev = 0.0;
    std::size_t failures = 0;
    // |alpha_real - mean| <= stdev for the firm's own shuffled samples.
    bool inside_firm_band = false;
    // |alpha_real - pooled_mean| <= pooled_std.
    bool inside_pooled_band = false;
};

struct ShuffleReport {
    std::uint64_t seed = 0;
    std::string rng;
    std::size_t n_replicates = 0;
    double alpha_market = 0.0;
    std::vector<FirmBand> firms;
    double pooled_mean = 0.0;
    double pooled_std = 0.0;
    // Fractions of firms with a real exponent lying outside the pooled and per-firm bands.
    double exceedance_pooled = 0.0;
    double exceedance_firm = 0.0;
    std::size_t n_evaluated = 0;
    std::vector<std::string> failures;
    std::vector<std::string> warnings;
};

// Compares each firm's exponent with the spread of exponents obtained after
// shuffling trigger ids. Replicate r uses the sub-seed derive_seed(seed, r).
// Defaults to the tape's eligible firms.
ShuffleReport null_band(const Tape& tape, std::size_t n_replicates, std::uint64_t seed,
                        const ExponentEstimator& estimator, std::optional<std::vector<FirmId>> firms = std::nullopt);

}  // namespace impact
