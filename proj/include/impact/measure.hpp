#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impact/tape.hpp"
#include "impact/types.hpp"

namespace impact {

struct Binning {
    std::size_t n_bins = 25;
    std::size_t min_bin_count = 50;
    // Per-firm curves require the firm to meet the tape's activity floor.
    bool enforce_activity_floor = true;
};

struct ImpactBin {
    double lo = 0.0;
    double hi = 0.0;
    double mean_volume = 0.0;
    double delta = 0.0;
    double std_error = 0.0;
    std::size_t count = 0;
};

// Conditional mean signed move, in bps of the spread, on log-spaced volume bins.
struct ImpactCurve {
    Scope scope;
    std::vector<double> bin_edges;
    // Bins meeting min_bin_count, in ascending volume order.
    std::vector<ImpactBin> bins;
    std::size_t suppressed_bins = 0;
    std::size_t n_trades = 0;
    // Unconditional mean signed move of the scope (bps of spread).
    double mean_delta = 0.0;
    double mean_volume = 0.0;
};

ImpactCurve impact_curve(const Tape& tape, Scope scope, const Binning& binning = {});

enum class SeriesKind { response, correlation, kernel };
std::string to_string(SeriesKind kind);

// A function of tick lag, l = 0..L.
struct LagSeries {
    SeriesKind kind = SeriesKind::response;
    Scope scope;
    std::vector<double> values;
    std::vector<std::size_t> count;
    std::vector<double> std_error;
    // Lags whose sample count fell below the configured minimum.
    std::vector<bool> flagged;

    std::size_t max_lag() const noexcept { return values.empty() ? 0 : values.size() - 1; }
    double operator[](std::size_t l) const { return values.at(l); }
    bool any_flagged() const;

    static LagSeries from_values(SeriesKind kind, std::vector<double> values);
};

struct LagOptions {
    std::size_t min_samples = 100;
    // Sign correlation only: subtract the squared mean sign of the tape.
    bool connected = false;
};

// R(l) = <(q+_{t+l} - q-_t) eps_t> / sigma over 0 <= t <= N-1-l, t restricted to the scope.
LagSeries response(const Tape& tape, Scope scope, std::size_t max_lag, const LagOptions& options = {});

// C(l) = <eps_t eps_{t+l}> over 0 <= t <= N-1-l, t restricted to the scope.
LagSeries sign_correlation(const Tape& tape, Scope scope, std::size_t max_lag, const LagOptions& options = {});

// Fraction of the admissible ticks 0..N-1-l that belong to the firm.
double admissible_share(const Tape& tape, FirmId firm, std::size_t lag);

struct VolumeDistribution {
    Scope scope;
    double mean_volume = 0.0;
    // V / <V> in tick order.
    std::vector<double> scaled_samples;
    std::vector<double> bin_edges;
    std::vector<double> density;
    std::vector<std::size_t> counts;
};

VolumeDistribution volume_distribution(const Tape& tape, Scope scope, std::size_t n_bins = 40);
VolumeDistribution volume_distribution(std::vector<double> samples, std::size_t n_bins = 40);

// Largest gap between the empirical CDFs of two samples.
double sup_cdf_distance(std::vector<double> a, std::vector<double> b);

struct FactorizationCheck {
    std::vector<std::size_t> lags;
    std::vector<double> bin_edges;
    // ratio[i][j] for lag i and volume bin j: R(l, V) R(0) / (Delta(V) R(l)).
    std::vector<std::vector<double>> ratio;
    std::vector<std::vector<std::size_t>> counts;
    std::vector<std::vector<bool>> populated;
    // Max |ln ratio| over populated cells with a positive ratio.
    double summary = 0.0;
    std::size_t excluded_cells = 0;
};

FactorizationCheck factorization_check(const Tape& tape, const std::vector<std::size_t>& lags,
                                       const Binning& binning = {});

// CSV with columns bin_or_lag,value,count,stderr.
void write_csv(std::ostream& out, const LagSeries& series);
void write_csv(std::ostream& out, const ImpactCurve& curve);
LagSeries read_lag_series(std::istream& in, SeriesKind kind);

}  // namespace impact
