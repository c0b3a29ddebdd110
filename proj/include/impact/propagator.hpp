#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impact/fit.hpp"
#include "impact/measure.hpp"
#include "impact/tape.hpp"

namespace impact {

// How G(l) is continued beyond the last tabulated lag.
enum class Extrapolation { hold_last, power_tail };

// Which trades between t and t+l enter the response.
//   as_printed: sum over 0 < l' < l, as the reconstruction formula is usually written.
//   post_trade: sum over 0 < l' <= l with G(0) = 1, which also counts the impact of
//               the trade at t+l itself because the response is read at its
//               post-trade quote. This is the exact expectation for prices
//               generated as q+_t = q-_t + I_t eps_t.
enum class ResponseConvention { as_printed, post_trade };

std::string to_string(ResponseConvention convention);
ResponseConvention parse_convention(const std::string& text);

// G(l) = gamma0 / (l0^2 + l^2)^(beta / 2).
struct KernelForm {
    double gamma0 = 1.0;
    double l0 = 1.0;
    double beta = 0.5;
    double stderr_beta = 0.0;
    FitWindow window;
    double rms_log_residual = 0.0;
    std::size_t n_points = 0;
    std::size_t excluded_nonpositive = 0;

    double operator()(double l) const;
};

class Kernel {
public:
    // values[k] is G(k + 1) for k = 0..L_max-1.
    explicit Kernel(std::vector<double> values, Extrapolation extrapolation = Extrapolation::hold_last,
                    double tail_exponent = 0.0);

    static Kernel from_form(const KernelForm& form, std::size_t max_lag,
                            Extrapolation extrapolation = Extrapolation::hold_last);

    // G(0) = 1: a trade's own impact enters with unit weight.
    double at(std::size_t l) const noexcept;
    std::size_t max_lag() const noexcept { return values_.size(); }
    const std::vector<double>& values() const noexcept { return values_; }
    Extrapolation extrapolation() const noexcept { return extrapolation_; }
    double tail_exponent() const noexcept { return tail_exponent_; }
    const std::optional<KernelForm>& form() const noexcept { return form_; }

    void set_form(KernelForm form) { form_ = form; }
    Kernel with_hold_last() const;
    // Power-law continuation G(L) (l / L)^-beta; beta defaults to the fitted form's.
    Kernel with_power_tail(std::optional<double> beta = std::nullopt) const;

private:
    std::vector<double> values_;
    Extrapolation extrapolation_;
    double tail_exponent_;
    std::optional<KernelForm> form_;
};

// Fits the kernel form to G(l) for l in the window, in log space. Non-positive
// values are excluded. The scale l0 is found by a one-dimensional search; gamma0
// and beta follow by linear least squares at each candidate l0.
KernelForm fit_kernel_form(const Kernel& kernel, FitWindow window);

struct PropagatorOptions {
    // Tail horizon of the backward sum; 0 selects 4 * kernel.max_lag().
    std::size_t horizon = 0;
    ResponseConvention convention = ResponseConvention::as_printed;
};

// R(l) = R0' G(l) + R0 [sum_{0<l'<l} G(l-l') C(l') + sum_{l'=1..H} (G(l+l') - G(l')) C(l')]
// with R0' = own_impact when given (firm scope) and R0 otherwise. For a hold-last
// kernel the backward terms with l' >= L_max vanish identically and are skipped.
LagSeries reconstruct_response(const Kernel& kernel, const LagSeries& correlation, double market_impact,
                               std::optional<double> own_impact, std::size_t max_lag,
                               const PropagatorOptions& options = {});

struct InversionOptions {
    std::size_t horizon = 0;
    double ridge = 0.0;
    ResponseConvention convention = ResponseConvention::as_printed;
    std::optional<double> own_impact;
    // Window for the kernel-form fit; defaults to [1, L_max].
    std::optional<FitWindow> fit_window;
    double min_rcond = 1e-14;
};

struct InversionResult {
    Kernel kernel;
    double rcond = 0.0;
    std::size_t horizon = 0;
    double ridge = 0.0;
    std::optional<std::string> form_error;
};

// Solves the reconstruction equations for l = 1..L_max for G(1..L_max), holding
// G(l) = G(L_max) beyond L_max.
InversionResult invert_kernel(const LagSeries& response, const LagSeries& correlation, double market_impact,
                              std::size_t max_lag, const InversionOptions& options = {});

// Decay exponent (1 - gamma) / 2 that keeps prices diffusive under long-memory flow.
double critical_beta(double gamma);

struct CostDiagnostics {
    double kappa = 0.0;
    double chi = 0.0;
    std::size_t horizon = 0;
    bool include_lag0 = false;
};

CostDiagnostics cost_diagnostics(const LagSeries& response, const LagSeries& correlation, std::size_t horizon,
                                 bool include_lag0 = false);
CostDiagnostics cost_diagnostics(const Tape& tape, Scope scope, std::size_t horizon, bool include_lag0 = false);

struct KappaChiRow {
    FirmId firm{};
    double pi = 0.0;
    double chi = 0.0;
    double kappa_measured = 0.0;
    double kappa_reconstructed = 0.0;
    double impact0 = 0.0;
};

struct KappaChiStudy {
    std::vector<KappaChiRow> rows;
    std::size_t horizon = 0;
    // Least-squares slopes across firms; empty when fewer than two distinct chi values.
    std::optional<double> slope_measured;
    std::optional<double> slope_reconstructed;
    std::optional<double> slope_impact;
    bool degenerate = false;
};

KappaChiStudy kappa_chi_study(const Tape& tape, std::span<const FirmId> firms, const Kernel& kernel,
                              std::size_t horizon, const PropagatorOptions& options = {});

// Least-squares slope of y on x; empty when x has no spread.
std::optional<double> trend_slope(std::span<const double> x, std::span<const double> y);

// CSV with columns l,G0 for l = 1..L_max.
void write_kernel_csv(std::ostream& out, const Kernel& kernel);
Kernel read_kernel_csv(std::istream& in);

}  // namespace impact
