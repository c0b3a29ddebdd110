#include "impact/fit.hpp"

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <limits>

#include "impact/error.hpp"
#include "impact/format.hpp"

namespace impact {

PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y, std::span<const double> weights,
                          FitWindow window) {
    if (x.size() != y.size() || x.size() != weights.size()) throw ConfigError("power-law fit: input lengths differ");
    if (!(window.lo < window.hi)) throw ConfigError("power-law fit: window lower bound must be below upper bound");

    std::vector<double> lx, ly, w;
    std::size_t in_window = 0;
    std::size_t nonpositive = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !std::isfinite(x[i]) || x[i] < window.lo || x[i] > window.hi) continue;
        if (!(weights[i] > 0.0)) continue;
        ++in_window;
        if (!(y[i] > 0.0) || !std::isfinite(y[i])) {
            ++nonpositive;
            continue;
        }
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
        w.push_back(weights[i]);
    }
    if (in_window > 0 && 2 * nonpositive > in_window) {
        throw NumericalError("power-law fit refused: " + std::to_string(nonpositive) + " of " +
                             std::to_string(in_window) + " points in the window have non-positive ordinates");
    }
    if (lx.size() < 4) {
        throw NumericalError("power-law fit needs at least 4 usable points in [" + format_double(window.lo) + ", " +
                             format_double(window.hi) + "], found " + std::to_string(lx.size()));
    }

    double sw = 0.0, mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sw += w[i];
        mx += w[i] * lx[i];
        my += w[i] * ly[i];
    }
    mx /= sw;
    my /= sw;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double dx = lx[i] - mx;
        const double dy = ly[i] - my;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if (!(sxx > 0.0)) throw NumericalError("power-law fit: abscissae in the window are all equal");
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;

    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double r = ly[i] - intercept - slope * lx[i];
        rss += w[i] * r * r;
    }
    const auto n = static_cast<double>(lx.size());
    // Weights are relative: the residual scale is estimated from the data.
    const double s2 = rss / (n - 2.0);
    PowerLawFit fit;
    fit.coefficient = std::exp(intercept);
    fit.exponent = slope;
    fit.stderr_exponent = std::sqrt(s2 / sxx);
    fit.stderr_log_coefficient = std::sqrt(s2 * (1.0 / sw + mx * mx / sxx));
    fit.window = window;
    fit.r_squared = syy > 0.0 ? 1.0 - rss / syy : 1.0;
    fit.n_points = lx.size();
    fit.excluded_nonpositive = nonpositive;
    return fit;
}

PowerLawFit fit_power_law(const ImpactCurve& curve, std::optional<FitWindow> window) {
    if (curve.bins.empty()) throw NumericalError("impact curve for " + curve.scope.name() + " has no reported bins");
    std::vector<double> x, y, w;
    for (const auto& b : curve.bins) {
        x.push_back(b.mean_volume);
        y.push_back(b.delta);
        w.push_back(static_cast<double>(b.count));
    }
    FitWindow win = window.value_or(FitWindow{x.front(), x.back()});
    if (!window && win.lo == win.hi) win.hi = win.lo * (1.0 + 1e-12);
    return fit_power_law(x, y, w, win);
}

PowerLawFit fit_power_law(const LagSeries& series, FitWindow window) {
    std::vector<double> x, y, w;
    for (std::size_t l = 1; l < series.values.size(); ++l) {
        if (!series.flagged.empty() && series.flagged[l]) continue;
        x.push_back(static_cast<double>(l));
        y.push_back(series.values[l]);
        w.push_back(static_cast<double>(series.count.empty() ? 1 : series.count[l]));
    }
    return fit_power_law(x, y, w, window);
}

namespace {

void check_volume_gamma(double gamma) {
    if (!(gamma > 2.0) || !std::isfinite(gamma)) {
        throw DomainError("volume-law exponent gamma must exceed 2 (got " + format_double(gamma) + ")");
    }
}

}  // namespace

double VolumeLaw::a() const {
    check_volume_gamma(gamma);
    return (gamma - 1.0) * std::pow(gamma - 2.0, gamma - 1.0);
}

double VolumeLaw::density(double x) const {
    if (x < 0.0) return 0.0;
    return a() / std::pow(b() + x, gamma);
}

double VolumeLaw::cdf(double x) const {
    check_volume_gamma(gamma);
    if (x <= 0.0) return 0.0;
    return 1.0 - std::pow(b() / (b() + x), gamma - 1.0);
}

double VolumeLaw::quantile(double u) const {
    check_volume_gamma(gamma);
    if (!(u > 0.0 && u <= 1.0)) throw DomainError("volume-law quantile needs u in (0, 1]");
    return b() * (std::pow(u, -1.0 / (gamma - 1.0)) - 1.0);
}

VolumeLawFit scaling_function_fit(std::span<const double> samples) {
    if (samples.empty()) throw DataError("volume-law fit needs samples");
    for (const double x : samples) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw DataError("volume-law fit needs non-negative finite samples");
    }
    const auto n = static_cast<double>(samples.size());
    auto loglik = [&](double g) {
        const double b = g - 2.0;
        double s = 0.0;
        for (const double x : samples) s += std::log(b + x);
        return n * std::log(g - 1.0) + n * (g - 1.0) * std::log(b) - g * s;
    };

    // Coarse scan in ln(gamma - 2) brackets the maximum before the Brent refinement.
    constexpr double lo_log = -12.0;
    const double hi_log = std::log(198.0);
    constexpr int grid = 240;
    int best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= grid; ++k) {
        const double g = 2.0 + std::exp(lo_log + (hi_log - lo_log) * k / grid);
        const double ll = loglik(g);
        if (ll > best_ll) {
            best_ll = ll;
            best = k;
        }
    }
    if (best == 0) {
        throw NumericalError("volume-law MLE runs into gamma <= 2 where the mean is undefined; "
                             "use an unconstrained three-parameter fit instead");
    }
    const double step = (hi_log - lo_log) / grid;
    const double left = lo_log + step * (best - 1);
    const double right = lo_log + step * std::min(best + 1, grid);
    const auto res = boost::math::tools::brent_find_minima(
        [&](double s) { return -loglik(2.0 + std::exp(s)); }, left, right, 52);
    const double g = 2.0 + std::exp(res.first);

    const double b = g - 2.0;
    double inv = 0.0, inv2 = 0.0;
    for (const double x : samples) {
        const double r = 1.0 / (b + x);
        inv += r;
        inv2 += r * r;
    }
    const double d2 = -n / ((g - 1.0) * (g - 1.0)) + n / b - n / (b * b) - 2.0 * inv + g * inv2;

    VolumeLawFit fit;
    fit.gamma = g;
    fit.b = b;
    fit.a = VolumeLaw{g}.a();
    fit.stderr_gamma = d2 < 0.0 ? std::sqrt(-1.0 / d2) : std::numeric_limits<double>::infinity();
    fit.log_likelihood = -res.second;
    fit.n = samples.size();
    return fit;
}

double gamma_factor(double alpha, double gamma) {
    if (!(gamma > 2.0) || !std::isfinite(gamma)) {
        throw DomainError("gamma factor needs gamma > 2 (got " + format_double(gamma) + ")");
    }
    if (!(alpha > -1.0)) throw DomainError("gamma factor needs alpha > -1 (got " + format_double(alpha) + ")");
    if (!(alpha < gamma - 1.0)) {
        throw DomainError("gamma factor needs alpha < gamma - 1 (got alpha " + format_double(alpha) + ", gamma " +
                          format_double(gamma) + ")");
    }
    const double direct = std::pow(gamma - 2.0, alpha) * std::tgamma(1.0 + alpha) * std::tgamma(gamma - alpha - 1.0) /
                          std::tgamma(gamma - 1.0);
    if (std::isfinite(direct) && direct > 0.0) return direct;
    return std::exp(alpha * std::log(gamma - 2.0) + std::lgamma(1.0 + alpha) + std::lgamma(gamma - alpha - 1.0) -
                    std::lgamma(gamma - 1.0));
}

double predicted_mean_impact(double c, double alpha, double mean_volume, double gamma) {
    if (!(mean_volume > 0.0)) throw DomainError("mean volume must be positive");
    return c * std::pow(mean_volume, alpha) * gamma_factor(alpha, gamma);
}

double constraint_coefficient(double alpha, double v0, double delta0) {
    if (!(v0 > 0.0) || !(delta0 > 0.0)) throw DomainError("constraint anchors V0 and Delta0 must be positive");
    return delta0 / std::pow(v0, alpha);
}

ConstraintResiduals constraint_relation(std::span<const FirmSummary> firms, double v0, double delta0) {
    if (!(v0 > 0.0) || !(delta0 > 0.0)) throw DomainError("constraint anchors V0 and Delta0 must be positive");
    ConstraintResiduals out;
    double ss = 0.0;
    for (const auto& f : firms) {
        if (!f.alpha || !f.c || !(*f.c > 0.0)) continue;
        const double r = std::log(*f.c) + *f.alpha * std::log(v0) - std::log(delta0);
        out.firms.push_back(f.firm);
        out.residuals.push_back(r);
        ss += r * r;
    }
    out.rms = out.residuals.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(out.residuals.size()));
    return out;
}

CrossFirmStatistics cross_firm_statistics(std::span<const FirmSummary> firms) {
    CrossFirmStatistics out;
    double weighted = 0.0;
    for (const auto& f : firms) {
        if (!f.alpha) continue;
        weighted += f.pi * *f.alpha;
        out.covered_fraction += f.pi;
        ++out.n_fitted;
    }
    if (out.n_fitted == 0 || !(out.covered_fraction > 0.0)) {
        throw NumericalError("no fitted firms available for cross-firm statistics");
    }
    out.alpha_bar = weighted / out.covered_fraction;

    std::vector<double> v, d, w;
    for (const auto& f : firms) {
        if (f.mean_volume > 0.0 && f.mean_impact > 0.0) {
            v.push_back(f.mean_volume);
            d.push_back(f.mean_impact);
            w.push_back(1.0);
        }
    }
    if (v.size() >= 4) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        if (*lo < *hi) out.impact_volume = fit_power_law(v, d, w, FitWindow{*lo, *hi});
    }
    return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ConfigError("pearson: input lengths differ");
    if (x.size() < 2) throw NumericalError("pearson: at least two pairs are required");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const double scale = std::max({1.0, std::abs(mx), std::abs(my)});
    const double tiny = 1e-24 * scale * scale * n;
    if (sxx <= tiny || syy <= tiny) throw NumericalError("pearson: undefined correlation, degenerate variance");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace impact
