#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "doctest.h"

#include "impact/error.hpp"
#include "impact/fit.hpp"
#include "impact/measure.hpp"
#include "impact/rng.hpp"
#include "impact/synth.hpp"

using namespace impact;

namespace {

// Integral of f over [0, inf) split at b: tanh-sinh near the origin, exp-sinh for the tail.
template <class F>
double half_line(F f, double b) {
    boost::math::quadrature::tanh_sinh<double> head;
    boost::math::quadrature::exp_sinh<double> tail;
    return head.integrate(f, 0.0, b) + tail.integrate(f, b, std::numeric_limits<double>::infinity());
}

double law_moment(double alpha, double gamma) {
    const double b = gamma - 2.0;
    const double a = (gamma - 1.0) * std::pow(b, gamma - 1.0);
    return half_line([&](double x) { return std::pow(x, alpha) * a / std::pow(b + x, gamma); }, b);
}

}  // namespace

TEST_CASE("noiseless power law is recovered to 1e-10") {
    std::vector<double> x, y, w;
    for (int i = 1; i <= 30; ++i) {
        x.push_back(1.5 * i);
        y.push_back(2.0 * std::sqrt(1.5 * i));
        w.push_back(i);
    }
    const auto f = fit_power_law(x, y, w, FitWindow{0, 100});
    CHECK(f.coefficient == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(f.exponent == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.stderr_exponent >= 0.0);
    CHECK(f.n_points == 30);
}

TEST_CASE("power-law fit is scale equivariant") {
    std::vector<double> x, y, w, xs;
    Rng rng(4);
    const double s = 7.5;
    for (int i = 1; i <= 40; ++i) {
        const double xi = std::exp(0.2 * i);
        x.push_back(xi);
        xs.push_back(s * xi);
        y.push_back(3.0 * std::pow(xi, -0.3) * std::exp(0.1 * rng.normal()));
        w.push_back(1.0 + i % 3);
    }
    const auto f = fit_power_law(x, y, w, FitWindow{0, 1e9});
    const auto g = fit_power_law(xs, y, w, FitWindow{0, 1e9});
    CHECK(g.exponent == doctest::Approx(f.exponent).epsilon(1e-12));
    CHECK(g.coefficient == doctest::Approx(f.coefficient * std::pow(s, -f.exponent)).epsilon(1e-12));
    CHECK(g.stderr_exponent == doctest::Approx(f.stderr_exponent).epsilon(1e-9));
}

TEST_CASE("power-law fit exclusions and refusals") {
    std::vector<double> x{1, 2, 3, 4, 5, 6}, y{1, 2, -1, 4, 5, 6}, w(6, 1.0);
    const auto f = fit_power_law(x, y, w, FitWindow{0, 10});
    CHECK(f.excluded_nonpositive == 1);
    CHECK(f.n_points == 5);

    std::vector<double> few{1, 2, 3}, fy{1, 2, 3}, fw(3, 1.0);
    CHECK_THROWS_AS(fit_power_law(few, fy, fw, FitWindow{0, 10}), NumericalError);

    std::vector<double> neg{1, -2, -3, -4, 5, 6};
    CHECK_THROWS_AS(fit_power_law(x, neg, w, FitWindow{0, 10}), NumericalError);
    CHECK_THROWS_AS(fit_power_law(x, y, w, FitWindow{5, 5}), ConfigError);
}

TEST_CASE("lag-series fit skips flagged lags and uses the window") {
    std::vector<double> v(101);
    for (std::size_t l = 0; l <= 100; ++l) v[l] = l == 0 ? 1.0 : 0.4 * std::pow(static_cast<double>(l), -0.212);
    auto s = LagSeries::from_values(SeriesKind::correlation, v);
    s.values[50] = 100.0;
    s.flagged[50] = true;
    const auto f = fit_power_law(s, FitWindow{10, 100});
    CHECK(f.exponent == doctest::Approx(-0.212).epsilon(1e-10));
    CHECK(f.n_points == 90);
}

TEST_CASE("volume law constants follow from unit mass and unit mean") {
    const VolumeLaw law{2.95};
    CHECK(law.b() == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(law.a() == doctest::Approx(1.95 * std::pow(0.95, 1.95)).epsilon(1e-14));
    CHECK(law_moment(0.0, 2.95) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(law_moment(1.0, 2.95) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(law.cdf(0.0) == 0.0);
    CHECK(law.quantile(1.0) == 0.0);
    for (double u : {0.01, 0.3, 0.77}) CHECK(law.cdf(law.quantile(u)) == doctest::Approx(1.0 - u).epsilon(1e-12));
}

TEST_CASE("volume-law MLE recovers gamma") {
    for (double gamma : {2.5, 2.95, 3.5}) {
        Rng rng(derive_seed(31, static_cast<std::uint64_t>(gamma * 100)));
        std::vector<double> x(200000);
        for (auto& v : x) v = sample_volume_law(rng, gamma);
        const auto f = scaling_function_fit(x);
        CHECK(std::abs(f.gamma - gamma) <= 4.0 * f.stderr_gamma);
        CHECK(f.stderr_gamma > 0.0);
        CHECK(f.b == doctest::Approx(f.gamma - 2.0));
        CHECK(f.n == x.size());
    }
}

TEST_CASE("volume law approaches the unit exponential for large gamma") {
    Rng rng(8);
    double mean = 0.0, var = 0.0;
    const int n = 100000;
    std::vector<double> x(n);
    for (auto& v : x) {
        v = sample_volume_law(rng, 50.0);
        mean += v;
    }
    mean /= n;
    for (double v : x) var += (v - mean) * (v - mean);
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    // Lomax variance b^2 k / ((k - 1)^2 (k - 2)) with k = 49, b = 48.
    CHECK(var / n == doctest::Approx(49.0 / 47.0).epsilon(0.05));
    const VolumeLaw law{50.0};
    double sup = 0.0;
    for (double t = 0.0; t < 8.0; t += 0.01) sup = std::max(sup, std::abs(law.cdf(t) - (1.0 - std::exp(-t))));
    CHECK(sup < 0.01);
}

TEST_CASE("volume-law MLE below gamma = 2 asks for the three-parameter fallback") {
    // With most of the mass at zero the likelihood keeps rising as gamma falls to 2.
    std::vector<double> x(20000, 0.0);
    for (std::size_t i = 0; i < 8000; ++i) x[i] = 2.5;
    try {
        scaling_function_fit(x);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("three-parameter") != std::string::npos);
    }
}

TEST_CASE("gamma factor identities") {
    for (double g = 2.05; g <= 10.0; g += 0.15) {
        CHECK(std::abs(gamma_factor(0.0, g) - 1.0) <= 1e-12);
        CHECK(std::abs(gamma_factor(1.0, g) - 1.0) <= 1e-12);
    }
}

TEST_CASE("gamma factor matches quadrature on the alpha-gamma grid") {
    for (double alpha = -0.5; alpha <= 0.6 + 1e-9; alpha += 0.05) {
        for (double gamma : {2.21, 2.4, 2.6, 2.95, 3.3, 3.7, 4.0}) {
            const double q = law_moment(alpha, gamma);
            CHECK(std::abs(gamma_factor(alpha, gamma) - q) <= 1e-6 * q);
        }
    }
    CHECK(gamma_factor(0.25, 2.95) == doctest::Approx(law_moment(0.25, 2.95)).epsilon(1e-9));
}

TEST_CASE("gamma factor domain") {
    CHECK_THROWS_AS(gamma_factor(0.2, 2.0), DomainError);
    CHECK_THROWS_AS(gamma_factor(-1.0, 3.0), DomainError);
    CHECK_THROWS_AS(gamma_factor(2.0, 3.0), DomainError);
    CHECK(gamma_factor(1.9, 3.0) > 0.0);
}

TEST_CASE("predicted mean impact") {
    CHECK(predicted_mean_impact(3.0, 0.0, 5000.0, 2.95) == doctest::Approx(3.0).epsilon(1e-14));

    // Monte-Carlo oracle: average c V^alpha over 1e6 draws.
    Rng rng(77);
    const double c = 2.0, alpha = 0.4, mean_v = 25000.0, gamma = 2.95;
    double sum = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) sum += c * std::pow(mean_v * sample_volume_law(rng, gamma), alpha);
    CHECK(sum / n == doctest::Approx(predicted_mean_impact(c, alpha, mean_v, gamma)).epsilon(0.01));
}

TEST_CASE("constraint relation") {
    CHECK(constraint_coefficient(0.25, 60000, 40) == doctest::Approx(40.0 / std::pow(60000.0, 0.25)));
    CHECK(constraint_coefficient(0.25, 60000, 40) == doctest::Approx(2.556).epsilon(1e-3));

    std::vector<FirmSummary> firms(3);
    for (int i = 0; i < 3; ++i) {
        firms[i].firm = firm_id(i);
        firms[i].alpha = 0.1 * (i + 1);
        firms[i].c = constraint_coefficient(*firms[i].alpha, 60000, 40);
    }
    auto r = constraint_relation(firms, 60000, 40);
    REQUIRE(r.residuals.size() == 3);
    for (double v : r.residuals) CHECK(std::abs(v) < 1e-12);
    CHECK(r.rms < 1e-12);

    firms[1].c = *firms[1].c * std::exp(0.3);
    firms[2].alpha.reset();
    r = constraint_relation(firms, 60000, 40);
    REQUIRE(r.residuals.size() == 2);
    CHECK(r.residuals[1] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(r.rms == doctest::Approx(0.3 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("tick size sets the large-volume impact anchor") {
    // One tick on a 20-unit price is about 1/2000 in log terms; with a spread
    // of two ticks, a one-tick mid move is half the spread, i.e. 50 bps.
    SyntheticManifest m;
    m.n_trades = 200000;
    m.seed = 45;
    m.tick_size = 0.01;
    m.reference_price = 20.0;
    m.mean_spread = 2.0 * std::log(1.0 + 0.01 / 20.0);
    m.kernel.horizon = 20;
    FirmSpec f;
    f.id = 1;
    f.weight = 1.0;
    f.alpha = 0.25;
    f.c = constraint_coefficient(0.25, 60000, 50);
    f.mean_volume = 60000;
    f.tail = TailMemoryless{};
    m.firms.push_back(f);
    const auto synth = generate(m);
    const auto curve = impact_curve(synth.tape, Scope::market(), Binning{25, 200, false});
    const auto fit = fit_power_law(curve);
    const double delta0 = fit.coefficient * std::pow(60000.0, fit.exponent);
    const double one_tick = 100.0 * std::log(1.0 + 0.01 / 20.0) / synth.tape.mean_spread();
    CHECK(delta0 == doctest::Approx(one_tick).epsilon(0.02));
    for (const auto& r : synth.records) {
        const double k = r.price / 0.01;
        CHECK(std::abs(k - std::round(k)) < 1e-6);
        if (r.second > 34300) break;
    }
}

TEST_CASE("cross-firm statistics by hand") {
    std::vector<FirmSummary> firms(4);
    const double pi[] = {0.5, 0.3, 0.15, 0.05};
    const double alpha[] = {0.2, 0.4, -0.1, 0.6};
    for (int i = 0; i < 4; ++i) {
        firms[i].firm = firm_id(i);
        firms[i].pi = pi[i];
        firms[i].alpha = alpha[i];
        firms[i].mean_volume = 1000.0 * (i + 1);
        firms[i].mean_impact = 5.0 * std::pow(1000.0 * (i + 1), 0.7);
    }
    firms[3].alpha.reset();
    const auto s = cross_firm_statistics(firms);
    CHECK(s.alpha_bar == doctest::Approx((0.5 * 0.2 + 0.3 * 0.4 + 0.15 * -0.1) / 0.95).epsilon(1e-14));
    CHECK(s.covered_fraction == doctest::Approx(0.95));
    CHECK(s.n_fitted == 3);
    REQUIRE(s.impact_volume.has_value());
    CHECK(s.impact_volume->exponent == doctest::Approx(0.7).epsilon(1e-10));
}

TEST_CASE("pearson correlation and degenerate input") {
    const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8.5}, flat{1, 1, 1, 1};
    const double mx = 2.5, my = 5.125;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson(x, y) == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-14));
    CHECK_THROWS_AS(pearson(x, flat), NumericalError);
}

TEST_CASE("identical firms give alpha_bar = alpha_M and an undefined correlation") {
    std::vector<FirmSummary> firms(3);
    for (int i = 0; i < 3; ++i) {
        firms[i].pi = 1.0 / 3.0;
        firms[i].alpha = 0.25;
    }
    const auto s = cross_firm_statistics(firms);
    CHECK(s.alpha_bar == doctest::Approx(0.25).epsilon(1e-15));
    std::vector<double> per_firm{0.25, 0.25, 0.25}, market{0.25, 0.25, 0.25};
    CHECK_THROWS_AS(pearson(per_firm, market), NumericalError);
}

TEST_CASE("synthetic firms: measured mean impact tracks the gamma-factor prediction") {
    SyntheticManifest m;
    m.n_trades = 400000;
    m.seed = 606;
    m.kernel.horizon = 50;
    m.constraint = ConstraintSpec{60000.0, 40.0};
    for (int i = 0; i < 5; ++i) {
        FirmSpec f;
        f.id = i + 1;
        f.weight = 0.2;
        f.alpha = -0.2 + 0.15 * i;
        f.mean_volume = 60000.0 * std::pow(3.0, i);
        f.tail = TailMemoryless{};
        m.firms.push_back(f);
    }
    const auto synth = generate(m);
    std::vector<FirmSummary> firms;
    for (const FirmId id : synth.tape.firms()) {
        const auto curve = impact_curve(synth.tape, Scope::of(id));
        const auto fit = fit_power_law(curve);
        FirmSummary s;
        s.firm = id;
        s.pi = synth.tape.participation(id);
        s.alpha = fit.exponent;
        s.c = fit.coefficient;
        s.mean_volume = curve.mean_volume;
        s.mean_impact = curve.mean_delta;
        const double predicted = predicted_mean_impact(fit.coefficient, fit.exponent, curve.mean_volume, 2.95);
        CHECK(curve.mean_delta == doctest::Approx(predicted).epsilon(0.05));
        firms.push_back(s);
    }
    // Cross-firm slope of ln <Delta_i> on ln <V_i>, predicted from the manifest alone.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& f : m.firms) {
        const double x = std::log(f.mean_volume);
        const double y = std::log(predicted_mean_impact(m.impact_coefficient(f), f.alpha, f.mean_volume, 2.95));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double predicted_slope = (5 * sxy - sx * sy) / (5 * sxx - sx * sx);
    const auto stats = cross_firm_statistics(firms);
    REQUIRE(stats.impact_volume.has_value());
    CHECK(std::abs(stats.impact_volume->exponent - predicted_slope) < 0.05);
}

TEST_CASE("alpha_bar correlates with alpha_M across synthetic stocks") {
    std::vector<double> bars, markets;
    for (int stock = 0; stock < 6; ++stock) {
        SyntheticManifest m;
        m.n_trades = 120000;
        m.seed = 900 + stock;
        m.kernel.horizon = 20;
        m.constraint = ConstraintSpec{60000.0, 40.0};
        for (int i = 0; i < 4; ++i) {
            FirmSpec f;
            f.id = i + 1;
            f.weight = 0.25;
            f.alpha = 0.05 + 0.07 * stock + 0.1 * (i - 1.5);
            f.mean_volume = 20000.0;
            f.tail = TailMemoryless{};
            m.firms.push_back(f);
        }
        const auto synth = generate(m);
        std::vector<FirmSummary> firms;
        for (const FirmId id : synth.tape.firms()) {
            FirmSummary s;
            s.pi = synth.tape.participation(id);
            s.alpha = fit_power_law(impact_curve(synth.tape, Scope::of(id), Binning{25, 50, false})).exponent;
            firms.push_back(s);
        }
        bars.push_back(cross_firm_statistics(firms).alpha_bar);
        markets.push_back(fit_power_law(impact_curve(synth.tape, Scope::market())).exponent);
    }
    CHECK(pearson(bars, markets) > 0.9);
}
