#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"

#include "impact/error.hpp"
#include "impact/measure.hpp"
#include "impact/propagator.hpp"
#include "impact/rng.hpp"
#include "impact/synth.hpp"
#include "helpers.hpp"

using namespace impact;
using impact::testing::hand_tape;

namespace {

LagSeries corr(std::vector<double> v) { return LagSeries::from_values(SeriesKind::correlation, std::move(v)); }

std::vector<double> power_correlation(std::size_t L, double amp, double gamma) {
    std::vector<double> c(L + 1, 1.0);
    for (std::size_t l = 1; l <= L; ++l) c[l] = amp * std::pow(static_cast<double>(l), -gamma);
    return c;
}

}  // namespace

TEST_CASE("kernel form and tabulation") {
    const KernelForm f{3.5, 21.3, 0.375};
    CHECK(f(10.0) == doctest::Approx(3.5 / std::pow(21.3 * 21.3 + 100.0, 0.1875)).epsilon(1e-15));
    const Kernel k = Kernel::from_form(f, 50);
    CHECK(k.at(0) == 1.0);
    CHECK(k.at(7) == doctest::Approx(f(7.0)).epsilon(1e-15));
    CHECK(k.at(500) == k.at(50));
    const Kernel tail = k.with_power_tail(0.375);
    CHECK(tail.at(100) == doctest::Approx(k.at(50) * std::pow(2.0, -0.375)).epsilon(1e-14));
    CHECK_THROWS_AS(Kernel(std::vector<double>{1.0}), ConfigError);
    CHECK_THROWS_AS(Kernel(std::vector<double>{1.0, 2.0}).with_power_tail(), ConfigError);
}

TEST_CASE("reconstruction: uncorrelated flow gives pure decay") {
    std::vector<double> c(21, 0.0);
    c[0] = 1.0;
    const Kernel k = Kernel::from_form(KernelForm{2.0, 3.0, 0.5}, 20);
    const auto r = reconstruct_response(k, corr(c), 1.3, std::nullopt, 20);
    for (std::size_t l = 0; l <= 20; ++l) CHECK(r[l] == doctest::Approx(1.3 * k.at(l)).epsilon(1e-14));
}

TEST_CASE("reconstruction: permanent impact telescopes") {
    const auto c = power_correlation(30, 0.5, 0.3);
    const Kernel k(std::vector<double>(30, 1.0));
    const auto r = reconstruct_response(k, corr(c), 2.0, std::nullopt, 30);
    double partial = 0.0;
    for (std::size_t l = 1; l <= 30; ++l) {
        CHECK(r[l] == doctest::Approx(2.0 * (1.0 + partial)).epsilon(1e-13));
        partial += c[l];
    }
}

TEST_CASE("reconstruction: L = 3 hand case") {
    // G(1..3) = 1, 0.5, 0.3 held beyond; C(0..3) = 1, 0.4, 0.2, 0.1; R0 = 1, H = 3.
    //   R(1) = 1   + 0                 + (-0.5*0.4 - 0.2*0.2 + 0)   = 0.76
    //   R(2) = 0.5 + 1*0.4             + (-0.7*0.4 - 0.2*0.2 + 0)   = 0.58
    //   R(3) = 0.3 + 0.5*0.4 + 1*0.2   + (-0.7*0.4 - 0.2*0.2 + 0)   = 0.38
    // The post-trade reading adds C(l) to each.
    const Kernel k(std::vector<double>{1.0, 0.5, 0.3});
    const auto c = corr({1.0, 0.4, 0.2, 0.1});
    const auto printed = reconstruct_response(k, c, 1.0, std::nullopt, 3, {3, ResponseConvention::as_printed});
    CHECK(printed[1] == doctest::Approx(0.76).epsilon(1e-14));
    CHECK(printed[2] == doctest::Approx(0.58).epsilon(1e-14));
    CHECK(printed[3] == doctest::Approx(0.38).epsilon(1e-14));
    const auto post = reconstruct_response(k, c, 1.0, std::nullopt, 3, {3, ResponseConvention::post_trade});
    CHECK(post[1] == doctest::Approx(1.16).epsilon(1e-14));
    CHECK(post[2] == doctest::Approx(0.78).epsilon(1e-14));
    CHECK(post[3] == doctest::Approx(0.48).epsilon(1e-14));
    CHECK_THROWS_AS(reconstruct_response(k, c, 1.0, std::nullopt, 3, {2, ResponseConvention::as_printed}),
                    ConfigError);
}

TEST_CASE("reconstruction: own impact enters only the first term") {
    const auto c = corr(power_correlation(10, 0.4, 0.5));
    const Kernel k = Kernel::from_form(KernelForm{1.5, 2.0, 0.4}, 10);
    const auto a = reconstruct_response(k, c, 2.0, std::nullopt, 10);
    const auto b = reconstruct_response(k, c, 2.0, 3.0, 10);
    for (std::size_t l = 1; l <= 10; ++l) CHECK(b[l] - a[l] == doctest::Approx(1.0 * k.at(l)).epsilon(1e-12));
}

TEST_CASE("reconstruction is homogeneous of degree one in the kernel") {
    const auto c = corr(power_correlation(40, 0.5, 0.25));
    const Kernel k = Kernel::from_form(KernelForm{3.5, 21.3, 0.375}, 40);
    std::vector<double> scaled = k.values();
    for (auto& v : scaled) v *= 2.5;
    const auto a = reconstruct_response(k, c, 1.2, std::nullopt, 40);
    const auto b = reconstruct_response(Kernel(scaled), c, 1.2, std::nullopt, 40);
    for (std::size_t l = 1; l <= 40; ++l) CHECK(b[l] == doctest::Approx(2.5 * a[l]).epsilon(1e-12));
}

TEST_CASE("per-firm reconstructions aggregate to the market reconstruction") {
    Rng rng(12);
    const std::size_t L = 25;
    const std::vector<double> pi{0.5, 0.3, 0.2};
    const std::vector<double> own{1.0, 2.5, 0.7};
    std::vector<std::vector<double>> ci(3, std::vector<double>(L + 1));
    std::vector<double> cm(L + 1, 0.0);
    double rm0 = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        rm0 += pi[i] * own[i];
        for (std::size_t l = 0; l <= L; ++l) {
            ci[i][l] = l == 0 ? 1.0 : 2.0 * rng.uniform() - 1.0;
            cm[l] += pi[i] * ci[i][l];
        }
    }
    const Kernel k = Kernel::from_form(KernelForm{2.0, 4.0, 0.6}, L);
    for (auto conv : {ResponseConvention::as_printed, ResponseConvention::post_trade}) {
        const auto market = reconstruct_response(k, corr(cm), rm0, std::nullopt, L, {0, conv});
        std::vector<double> sum(L + 1, 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto r = reconstruct_response(k, corr(ci[i]), rm0, own[i], L, {0, conv});
            for (std::size_t l = 0; l <= L; ++l) sum[l] += pi[i] * r[l];
        }
        for (std::size_t l = 0; l <= L; ++l) CHECK(sum[l] == doctest::Approx(market[l]).epsilon(1e-12));
    }
}

TEST_CASE("inversion round-trips random kernels and correlations") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Rng rng(seed);
        const std::size_t L = 60;
        std::vector<double> g(L), c(L + 1);
        double level = 0.5 + 2.0 * rng.uniform();
        for (auto& v : g) {
            v = level;
            level *= 0.8 + 0.2 * rng.uniform();
        }
        c[0] = 1.0;
        for (std::size_t l = 1; l <= L; ++l) c[l] = (2.0 * rng.uniform() - 1.0) * std::pow(static_cast<double>(l), -0.3);
        const Kernel truth(g);
        const double r0 = 0.5 + rng.uniform();
        for (auto conv : {ResponseConvention::as_printed, ResponseConvention::post_trade}) {
            const auto r = reconstruct_response(truth, corr(c), r0, std::nullopt, L, {0, conv});
            InversionOptions opt;
            opt.convention = conv;
            const auto inv = invert_kernel(r, corr(c), r0, L, opt);
            for (std::size_t l = 1; l <= L; ++l) {
                CHECK(std::abs(inv.kernel.at(l) - truth.at(l)) <= 1e-8 * std::abs(truth.at(l)));
            }
        }
    }
}

TEST_CASE("inversion with delta correlation returns R / R0") {
    std::vector<double> c(11, 0.0), r(11);
    c[0] = 1.0;
    for (std::size_t l = 0; l <= 10; ++l) r[l] = 2.0 / (1.0 + l);
    const auto inv = invert_kernel(LagSeries::from_values(SeriesKind::response, r), corr(c), 2.0, 10);
    for (std::size_t l = 1; l <= 10; ++l) CHECK(inv.kernel.at(l) == doctest::Approx(r[l] / 2.0).epsilon(1e-13));
}

TEST_CASE("inversion fits the kernel form and reports problems") {
    const std::size_t L = 200;
    const auto c = corr(power_correlation(L, 0.3, 0.212));
    const Kernel truth = Kernel::from_form(KernelForm{3.5, 21.3, 0.375}, L);
    const auto r = reconstruct_response(truth, c, 1.0, std::nullopt, L);
    const auto inv = invert_kernel(r, c, 1.0, L);
    REQUIRE(inv.kernel.form().has_value());
    CHECK(inv.kernel.form()->beta == doctest::Approx(0.375).epsilon(1e-6));
    CHECK(inv.kernel.form()->gamma0 == doctest::Approx(3.5).epsilon(1e-6));
    CHECK(inv.kernel.form()->l0 == doctest::Approx(21.3).epsilon(1e-5));

    InversionOptions ridge;
    ridge.ridge = 1e-6;
    const auto regularized = invert_kernel(r, c, 1.0, L, ridge);
    CHECK(regularized.kernel.at(50) == doctest::Approx(truth.at(50)).epsilon(1e-2));

    InversionOptions short_h;
    short_h.horizon = L - 1;
    CHECK_THROWS_AS(invert_kernel(r, c, 1.0, L, short_h), ConfigError);
    CHECK_THROWS_AS(invert_kernel(r, c, 0.0, L), DataError);
    InversionOptions negative;
    negative.ridge = -1.0;
    CHECK_THROWS_AS(invert_kernel(r, c, 1.0, L, negative), ConfigError);
}

TEST_CASE("inversion of a singular system names the condition estimate") {
    // Without own impact and with uncorrelated flow every coefficient vanishes.
    const auto c = corr({1.0, 0.0, 0.0});
    const auto r = LagSeries::from_values(SeriesKind::response, {1.0, 1.0, 1.0});
    InversionOptions opt;
    opt.own_impact = 0.0;
    try {
        invert_kernel(r, c, 1.0, 2, opt);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("condition") != std::string::npos);
    }
}

TEST_CASE("kernel form fit on exact values") {
    const KernelForm f{2.2, 8.0, 0.55};
    const Kernel k = Kernel::from_form(f, 400);
    const auto fit = fit_kernel_form(k, FitWindow{1, 400});
    CHECK(fit.beta == doctest::Approx(0.55).epsilon(1e-6));
    CHECK(fit.gamma0 == doctest::Approx(2.2).epsilon(1e-6));
    CHECK(fit.l0 == doctest::Approx(8.0).epsilon(1e-5));
    CHECK(fit.rms_log_residual < 1e-8);
    std::vector<double> neg(10, -1.0);
    CHECK_THROWS_AS(fit_kernel_form(Kernel(neg), FitWindow{1, 10}), NumericalError);
}

TEST_CASE("critical beta") {
    CHECK(critical_beta(0.212) == doctest::Approx(0.394).epsilon(1e-12));
    CHECK(critical_beta(0.183) == doctest::Approx(0.4085).epsilon(1e-12));
    CHECK(critical_beta(1.0 - 1e-12) < 1e-11);
    CHECK_THROWS_AS(critical_beta(0.0), DomainError);
    CHECK_THROWS_AS(critical_beta(1.0), DomainError);
}

TEST_CASE("cost diagnostics conventions") {
    const auto r = LagSeries::from_values(SeriesKind::response, std::vector<double>(11, 0.7));
    std::vector<double> d(11, 0.0);
    d[0] = 1.0;
    const auto c = corr(d);
    const auto a = cost_diagnostics(r, c, 10);
    CHECK(a.kappa == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(a.chi == 0.0);
    CHECK(cost_diagnostics(r, c, 10, true).chi == 1.0);
    CHECK_THROWS_AS(cost_diagnostics(r, c, 11), DataError);
}

TEST_CASE("cost diagnostics: hand tape with L = 5") {
    const Tape tape = hand_tape({{1, 1, 1, 0.0, 1.0},
                                 {2, -1, 1, 1.0, 0.0},
                                 {1, 1, 1, 0.0, 2.0},
                                 {1, 1, 1, 2.0, 3.0},
                                 {2, -1, 1, 3.0, 2.5},
                                 {1, -1, 1, 2.5, 2.0},
                                 {2, 1, 1, 2.0, 2.5},
                                 {1, 1, 1, 2.5, 3.5}});
    const auto sgn = tape.signs();
    const auto qb = tape.quotes_before();
    const auto qa = tape.quotes_after();
    const std::vector<std::size_t> own{0, 2, 3, 5, 7};
    double kappa = 0.0, chi = 0.0;
    for (std::size_t l = 1; l <= 5; ++l) {
        double rs = 0.0, cs = 0.0;
        int n = 0;
        for (const auto t : own) {
            if (t + l >= tape.size()) continue;
            rs += (qa[t + l] - qb[t]) * sgn[t];
            cs += sgn[t] * sgn[t + l];
            ++n;
        }
        kappa += rs / n / 5.0;
        chi += cs / n;
    }
    const auto d = cost_diagnostics(tape, Scope::of(firm_id(1)), 5);
    CHECK(d.kappa == doctest::Approx(kappa).epsilon(1e-14));
    CHECK(d.chi == doctest::Approx(chi).epsilon(1e-14));
}

TEST_CASE("kappa/chi study with one firm is degenerate") {
    std::vector<testing::Row> rows;
    Rng rng(3);
    for (int t = 0; t < 300; ++t) {
        const int eps = rng.coin() ? 1 : -1;
        rows.push_back({1, eps, 1.0, 0.0, 0.1 * eps});
    }
    const Tape tape = hand_tape(rows);
    const Kernel k = Kernel::from_form(KernelForm{1.0, 1.0, 0.5}, 10);
    const std::vector<FirmId> firms{firm_id(1)};
    const auto study = kappa_chi_study(tape, firms, k, 10);
    CHECK(study.rows.size() == 1);
    CHECK(study.degenerate);
    CHECK_FALSE(study.slope_measured.has_value());
}

TEST_CASE("trend slope") {
    const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7}, flat{2, 2, 2, 2};
    CHECK(trend_slope(x, y).value() == doctest::Approx(2.0));
    CHECK_FALSE(trend_slope(flat, y).has_value());
}

TEST_CASE("kernel CSV round-trip") {
    const Kernel k = Kernel::from_form(KernelForm{3.5, 21.3, 0.375}, 30);
    std::ostringstream out;
    write_kernel_csv(out, k);
    std::istringstream in(out.str());
    CHECK(read_kernel_csv(in).values() == k.values());
    std::istringstream bad("l,G0\n2,0.5\n");
    CHECK_THROWS_AS(read_kernel_csv(bad), DataError);
}

TEST_CASE("measured response of a synthetic tape matches the forward model") {
    SyntheticManifest m;
    m.n_trades = 400000;
    m.seed = 314;
    m.kernel = KernelSpec{3.5, 21.3, 0.375, 100};
    for (int i = 0; i < 3; ++i) {
        FirmSpec f;
        f.id = i + 1;
        f.weight = i == 2 ? 0.4 : 0.3;
        f.alpha = 0.3;
        f.c = 2.0;
        f.mean_volume = 10000.0;
        f.tail = i == 0 ? TailSpec{TailMemoryless{}} : TailSpec{1.4};
        m.firms.push_back(f);
    }
    m.impact_noise = 0.3;
    const auto synth = generate(m);
    const std::size_t L = 100;
    const auto r = response(synth.tape, Scope::market(), L);
    const auto c = sign_correlation(synth.tape, Scope::market(), L);
    const Kernel truth = Kernel::from_form(m.kernel.form(), m.kernel.horizon);
    const auto model = reconstruct_response(truth, c, r[0], std::nullopt, L, {0, ResponseConvention::post_trade});
    for (std::size_t l : {1u, 5u, 20u, 50u, 100u}) CHECK(r[l] == doctest::Approx(model[l]).epsilon(0.05));
}
