#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "impact/measure.hpp"
#include "impact/types.hpp"

namespace impact {

struct FitWindow {
    double lo = 0.0;
    double hi = 0.0;
};

// y = coefficient * x^exponent, fitted on log-log axes.
struct PowerLawFit {
    double coefficient = 0.0;
    double exponent = 0.0;
    double stderr_exponent = 0.0;
    double stderr_log_coefficient = 0.0;
    FitWindow window;
    double r_squared = 0.0;
    std::size_t n_points = 0;
    std::size_t excluded_nonpositive = 0;
};

// Weighted least squares of ln y on ln x over points with x inside the window.
// Non-positive or non-finite ordinates are excluded and counted; the fit is
// refused when they make up more than half of the in-window points.
PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y, std::span<const double> weights,
                          FitWindow window);

// Uses bin mean volumes and counts; the default window spans every reported bin.
PowerLawFit fit_power_law(const ImpactCurve& curve, std::optional<FitWindow> window = std::nullopt);

constexpr FitWindow default_lag_window{10.0, 1000.0};

// Uses lag indices and per-lag counts; flagged lags are skipped.
PowerLawFit fit_power_law(const LagSeries& series, FitWindow window = default_lag_window);

// P(x) = a / (b + x)^gamma with unit mass and unit mean.
struct VolumeLaw {
    double gamma = 3.0;

    double b() const noexcept { return gamma - 2.0; }
    double a() const;
    double density(double x) const;
    double cdf(double x) const;
    double quantile(double u) const;
};

struct VolumeLawFit {
    double a = 0.0;
    double b = 0.0;
    double gamma = 0.0;
    double stderr_gamma = 0.0;
    double log_likelihood = 0.0;
    std::size_t n = 0;
};

// Maximum-likelihood gamma for samples already scaled to unit mean.
VolumeLawFit scaling_function_fit(std::span<const double> samples);

// Mean of x^alpha under the volume law.
double gamma_factor(double alpha, double gamma);

double predicted_mean_impact(double c, double alpha, double mean_volume, double gamma);

// c such that c * V0^alpha = Delta0.
double constraint_coefficient(double alpha, double v0, double delta0);

struct FirmSummary {
    FirmId firm{};
    double pi = 0.0;
    std::size_t n_trades = 0;
    std::optional<double> alpha;
    std::optional<double> c;
    std::optional<double> alpha_stderr;
    double mean_volume = 0.0;
    double mean_impact = 0.0;
    std::optional<double> predicted_impact;
    std::optional<double> kappa;
    std::optional<double> chi;
};

struct ConstraintResiduals {
    std::vector<FirmId> firms;
    std::vector<double> residuals;
    double rms = 0.0;
};

// ln c + alpha ln V0 - ln Delta0 for every firm with a fit.
ConstraintResiduals constraint_relation(std::span<const FirmSummary> firms, double v0, double delta0);

struct CrossFirmStatistics {
    // Participation-weighted mean exponent, weights renormalized over fitted firms.
    double alpha_bar = 0.0;
    // Sum of participation ratios of the fitted firms.
    double covered_fraction = 0.0;
    std::size_t n_fitted = 0;
    // Log-log slope of mean impact against mean volume across firms.
    std::optional<PowerLawFit> impact_volume;
};

CrossFirmStatistics cross_firm_statistics(std::span<const FirmSummary> firms);

// Sample correlation coefficient; throws NumericalError on degenerate variance.
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace impact
