#include "impact/propagator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "impact/error.hpp"
#include "impact/format.hpp"

namespace impact {

std::string to_string(ResponseConvention convention) {
    return convention == ResponseConvention::as_printed ? "as_printed" : "post_trade";
}

ResponseConvention parse_convention(const std::string& text) {
    if (text == "as_printed") return ResponseConvention::as_printed;
    if (text == "post_trade") return ResponseConvention::post_trade;
    throw ConfigError("response convention must be 'as_printed' or 'post_trade', got '" + text + "'");
}

double KernelForm::operator()(double l) const {
    return gamma0 / std::pow(l0 * l0 + l * l, beta / 2.0);
}

Kernel::Kernel(std::vector<double> values, Extrapolation extrapolation, double tail_exponent)
    : values_(std::move(values)), extrapolation_(extrapolation), tail_exponent_(tail_exponent) {
    if (values_.size() < 2) throw ConfigError("a kernel needs at least two tabulated lags");
    for (std::size_t k = 0; k < values_.size(); ++k) {
        if (!std::isfinite(values_[k])) throw NumericalError("kernel value at lag " + std::to_string(k + 1) + " is not finite");
    }
    if (!std::isfinite(tail_exponent_)) throw ConfigError("kernel tail exponent must be finite");
}

Kernel Kernel::from_form(const KernelForm& form, std::size_t max_lag, Extrapolation extrapolation) {
    std::vector<double> v(max_lag);
    for (std::size_t l = 1; l <= max_lag; ++l) v[l - 1] = form(static_cast<double>(l));
    Kernel k(std::move(v), extrapolation, form.beta);
    k.set_form(form);
    return k;
}

double Kernel::at(std::size_t l) const noexcept {
    if (l == 0) return 1.0;
    if (l <= values_.size()) return values_[l - 1];
    if (extrapolation_ == Extrapolation::hold_last) return values_.back();
    const auto last = static_cast<double>(values_.size());
    return values_.back() * std::pow(static_cast<double>(l) / last, -tail_exponent_);
}

Kernel Kernel::with_hold_last() const {
    Kernel k = *this;
    k.extrapolation_ = Extrapolation::hold_last;
    return k;
}

Kernel Kernel::with_power_tail(std::optional<double> beta) const {
    Kernel k = *this;
    if (beta) {
        k.tail_exponent_ = *beta;
    } else if (form_) {
        k.tail_exponent_ = form_->beta;
    } else {
        throw ConfigError("power-tail extrapolation needs an exponent or a fitted kernel form");
    }
    k.extrapolation_ = Extrapolation::power_tail;
    return k;
}

KernelForm fit_kernel_form(const Kernel& kernel, FitWindow window) {
    if (!(window.lo < window.hi)) throw ConfigError("kernel fit window lower bound must be below upper bound");
    std::vector<double> lag, y;
    std::size_t in_window = 0;
    std::size_t nonpositive = 0;
    for (std::size_t l = 1; l <= kernel.max_lag(); ++l) {
        const auto x = static_cast<double>(l);
        if (x < window.lo || x > window.hi) continue;
        ++in_window;
        const double g = kernel.at(l);
        if (!(g > 0.0)) {
            ++nonpositive;
            continue;
        }
        lag.push_back(x);
        y.push_back(std::log(g));
    }
    if (lag.size() < 4) {
        throw NumericalError("kernel form fit needs at least 4 positive values in the window, found " +
                             std::to_string(lag.size()));
    }
    if (2 * nonpositive > in_window) {
        throw NumericalError("kernel form fit refused: " + std::to_string(nonpositive) + " of " +
                             std::to_string(in_window) + " kernel values in the window are non-positive");
    }

    struct Linear {
        double intercept, beta, rss, suu;
    };
    const auto n = static_cast<double>(lag.size());
    auto solve = [&](double l0) {
        std::vector<double> u(lag.size());
        double mu = 0.0, my = 0.0;
        for (std::size_t i = 0; i < lag.size(); ++i) {
            u[i] = -0.5 * std::log(l0 * l0 + lag[i] * lag[i]);
            mu += u[i];
            my += y[i];
        }
        mu /= n;
        my /= n;
        double suu = 0.0, suy = 0.0;
        for (std::size_t i = 0; i < lag.size(); ++i) {
            suu += (u[i] - mu) * (u[i] - mu);
            suy += (u[i] - mu) * (y[i] - my);
        }
        const double beta = suu > 0.0 ? suy / suu : 0.0;
        const double intercept = my - beta * mu;
        double rss = 0.0;
        for (std::size_t i = 0; i < lag.size(); ++i) {
            const double r = y[i] - intercept - beta * u[i];
            rss += r * r;
        }
        return Linear{intercept, beta, rss, suu};
    };

    const double lo = std::log(1e-3);
    const double hi = std::log(std::max(10.0 * window.hi, 10.0));
    constexpr int grid = 160;
    int best = 0;
    double best_rss = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= grid; ++k) {
        const double rss = solve(std::exp(lo + (hi - lo) * k / grid)).rss;
        if (rss < best_rss) {
            best_rss = rss;
            best = k;
        }
    }
    const double step = (hi - lo) / grid;
    const auto res = boost::math::tools::brent_find_minima(
        [&](double s) { return solve(std::exp(s)).rss; }, lo + step * std::max(best - 1, 0),
        lo + step * std::min(best + 1, grid), 52);
    const double l0 = std::exp(res.first);
    const Linear fit = solve(l0);

    KernelForm form;
    form.gamma0 = std::exp(fit.intercept);
    form.l0 = l0;
    form.beta = fit.beta;
    form.stderr_beta = (n > 3 && fit.suu > 0.0) ? std::sqrt(fit.rss / (n - 3.0) / fit.suu) : 0.0;
    form.window = window;
    form.rms_log_residual = std::sqrt(fit.rss / n);
    form.n_points = lag.size();
    form.excluded_nonpositive = nonpositive;
    return form;
}

namespace {

std::size_t backward_extent(const Kernel& kernel, std::size_t horizon) {
    if (kernel.extrapolation() == Extrapolation::hold_last) return std::min(horizon, kernel.max_lag() - 1);
    return horizon;
}

void require_finite(const LagSeries& s, std::size_t upto, const char* what) {
    if (s.max_lag() < upto) {
        throw DataError(std::string(what) + " is defined to lag " + std::to_string(s.max_lag()) + " but lag " +
                        std::to_string(upto) + " is required");
    }
    for (std::size_t l = 0; l <= upto; ++l) {
        if (!std::isfinite(s.values[l])) {
            throw DataError(std::string(what) + " is not finite at lag " + std::to_string(l));
        }
    }
}

}  // namespace

LagSeries reconstruct_response(const Kernel& kernel, const LagSeries& correlation, double market_impact,
                               std::optional<double> own_impact, std::size_t max_lag,
                               const PropagatorOptions& options) {
    const std::size_t horizon = options.horizon ? options.horizon : 4 * kernel.max_lag();
    if (horizon < max_lag) {
        throw ConfigError("tail horizon " + std::to_string(horizon) + " is below the response horizon " +
                          std::to_string(max_lag));
    }
    const std::size_t back = backward_extent(kernel, horizon);
    require_finite(correlation, std::max(max_lag, back), "sign correlation");
    const auto& c = correlation.values;
    const double r0 = own_impact.value_or(market_impact);
    const bool post = options.convention == ResponseConvention::post_trade;

    std::vector<double> r(max_lag + 1);
    r[0] = r0;
    for (std::size_t l = 1; l <= max_lag; ++l) {
        double forward = 0.0;
        for (std::size_t lp = 1; lp < l; ++lp) forward += kernel.at(l - lp) * c[lp];
        if (post) forward += c[l];
        double backward = 0.0;
        for (std::size_t lp = 1; lp <= back; ++lp) backward += (kernel.at(l + lp) - kernel.at(lp)) * c[lp];
        r[l] = r0 * kernel.at(l) + market_impact * (forward + backward);
    }
    auto out = LagSeries::from_values(SeriesKind::response, std::move(r));
    out.scope = correlation.scope;
    return out;
}

InversionResult invert_kernel(const LagSeries& response, const LagSeries& correlation, double market_impact,
                              std::size_t max_lag, const InversionOptions& options) {
    if (max_lag < 2) throw ConfigError("kernel inversion needs L_max >= 2");
    const std::size_t horizon = options.horizon ? options.horizon : 4 * max_lag;
    if (horizon < max_lag) {
        throw ConfigError("tail horizon " + std::to_string(horizon) + " is below L_max " + std::to_string(max_lag));
    }
    if (options.ridge < 0.0 || !std::isfinite(options.ridge)) throw ConfigError("ridge must be non-negative");
    if (!(market_impact != 0.0) || !std::isfinite(market_impact)) {
        throw DataError("mean instantaneous impact must be finite and non-zero");
    }
    require_finite(response, max_lag, "response");
    require_finite(correlation, max_lag, "sign correlation");

    const auto m = static_cast<Eigen::Index>(max_lag);
    const double r0 = market_impact;
    const double own = options.own_impact.value_or(market_impact);
    const auto& c = correlation.values;
    const std::size_t back = std::min(horizon, max_lag - 1);

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd b(m);
    for (std::size_t l = 1; l <= max_lag; ++l) {
        const auto row = static_cast<Eigen::Index>(l - 1);
        b(row) = response.values[l];
        a(row, row) += own;
        for (std::size_t lp = 1; lp < l; ++lp) a(row, static_cast<Eigen::Index>(l - lp - 1)) += r0 * c[lp];
        if (options.convention == ResponseConvention::post_trade) b(row) -= r0 * c[l];
        for (std::size_t lp = 1; lp <= back; ++lp) {
            a(row, static_cast<Eigen::Index>(std::min(l + lp, max_lag) - 1)) += r0 * c[lp];
            a(row, static_cast<Eigen::Index>(lp - 1)) -= r0 * c[lp];
        }
    }

    Eigen::VectorXd g;
    double rcond = 0.0;
    if (options.ridge == 0.0) {
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
        rcond = lu.rcond();
        if (!(rcond >= options.min_rcond)) {
            throw NumericalError("kernel system is singular or ill-conditioned (reciprocal condition estimate " +
                                 format_double(rcond) + "); retry with a positive ridge");
        }
        g = lu.solve(b);
    } else {
        const Eigen::MatrixXd normal =
            a.transpose() * a + options.ridge * Eigen::MatrixXd::Identity(m, m);
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
        rcond = ldlt.rcond();
        if (ldlt.info() != Eigen::Success || !(rcond >= options.min_rcond)) {
            throw NumericalError("regularized kernel system is ill-conditioned (reciprocal condition estimate " +
                                 format_double(rcond) + ")");
        }
        g = ldlt.solve(a.transpose() * b);
    }
    if (!g.allFinite()) throw NumericalError("kernel solve produced non-finite values");

    std::vector<double> values(g.data(), g.data() + g.size());
    InversionResult result{Kernel(std::move(values)), rcond, horizon, options.ridge, std::nullopt};
    const FitWindow window = options.fit_window.value_or(FitWindow{1.0, static_cast<double>(max_lag)});
    try {
        result.kernel.set_form(fit_kernel_form(result.kernel, window));
    } catch (const Error& e) {
        result.form_error = e.what();
    }
    return result;
}

double critical_beta(double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw DomainError("critical beta needs a long-memory exponent 0 < gamma < 1 (got " + format_double(gamma) + ")");
    }
    return (1.0 - gamma) / 2.0;
}

CostDiagnostics cost_diagnostics(const LagSeries& response, const LagSeries& correlation, std::size_t horizon,
                                 bool include_lag0) {
    if (horizon < 1) throw ConfigError("cost horizon must be at least 1");
    if (response.max_lag() < horizon || correlation.max_lag() < horizon) {
        throw DataError("insufficient lag coverage for cost horizon " + std::to_string(horizon));
    }
    const std::size_t first = include_lag0 ? 0 : 1;
    double rsum = 0.0, csum = 0.0;
    for (std::size_t l = first; l <= horizon; ++l) {
        if (!std::isfinite(response.values[l]) || !std::isfinite(correlation.values[l])) {
            throw DataError("insufficient lag coverage: no samples at lag " + std::to_string(l));
        }
        rsum += response.values[l];
        csum += correlation.values[l];
    }
    CostDiagnostics d;
    d.kappa = rsum / static_cast<double>(horizon + 1 - first);
    d.chi = csum;
    d.horizon = horizon;
    d.include_lag0 = include_lag0;
    return d;
}

CostDiagnostics cost_diagnostics(const Tape& tape, Scope scope, std::size_t horizon, bool include_lag0) {
    return cost_diagnostics(response(tape, scope, horizon), sign_correlation(tape, scope, horizon), horizon,
                            include_lag0);
}

std::optional<double> trend_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) return std::nullopt;
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) return std::nullopt;
    return sxy / sxx;
}

KappaChiStudy kappa_chi_study(const Tape& tape, std::span<const FirmId> firms, const Kernel& kernel,
                              std::size_t horizon, const PropagatorOptions& options) {
    KappaChiStudy study;
    study.horizon = horizon;
    const double market0 = response(tape, Scope::market(), 0).values[0];
    const std::size_t tail = options.horizon ? options.horizon : 4 * kernel.max_lag();
    const std::size_t need = std::max(horizon, backward_extent(kernel, std::max(tail, horizon)));
    if (need >= tape.size()) throw ConfigError("tape is too short for the requested cost horizon");
    for (const FirmId firm : firms) {
        const Scope scope = Scope::of(firm);
        const auto r = response(tape, scope, horizon);
        const auto c = sign_correlation(tape, scope, need);
        const auto measured = cost_diagnostics(r, c, horizon);
        const auto rebuilt = reconstruct_response(kernel, c, market0, r.values[0], horizon, options);
        KappaChiRow row;
        row.firm = firm;
        row.pi = tape.participation(firm);
        row.chi = measured.chi;
        row.kappa_measured = measured.kappa;
        row.kappa_reconstructed = cost_diagnostics(rebuilt, c, horizon).kappa;
        row.impact0 = r.values[0];
        study.rows.push_back(row);
    }
    std::vector<double> chi, km, kr, i0;
    for (const auto& row : study.rows) {
        chi.push_back(row.chi);
        km.push_back(row.kappa_measured);
        kr.push_back(row.kappa_reconstructed);
        i0.push_back(row.impact0);
    }
    study.slope_measured = trend_slope(chi, km);
    study.slope_reconstructed = trend_slope(chi, kr);
    study.slope_impact = trend_slope(chi, i0);
    study.degenerate = !study.slope_measured.has_value();
    return study;
}

void write_kernel_csv(std::ostream& out, const Kernel& kernel) {
    out << "l,G0\n";
    for (std::size_t l = 1; l <= kernel.max_lag(); ++l) out << l << ',' << format_double(kernel.at(l)) << '\n';
}

Kernel read_kernel_csv(std::istream& in) {
    std::vector<double> values;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        const auto f = split(view, ',');
        const auto where = "kernel line " + std::to_string(lineno);
        if (f.size() < 2) throw DataError(where + ": expected l,G0");
        const auto l = parse_int(f[0]);
        const auto g = parse_double(f[1]);
        if (!l || !g) throw DataError(where + ": unparseable field");
        if (*l != static_cast<std::int64_t>(values.size() + 1)) throw DataError(where + ": lags must run 1,2,3,...");
        values.push_back(*g);
    }
    return Kernel(std::move(values));
}

}  // namespace impact
