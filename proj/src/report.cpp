#include "impact/report.hpp"

#include <cmath>

namespace impact {

using nlohmann::json;

json number(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

namespace {

json optional_number(const std::optional<double>& v) {
    return v ? number(*v) : json(nullptr);
}

}  // namespace

json to_json(const PowerLawFit& fit) {
    return json{{"parameters", {{"coefficient", number(fit.coefficient)}, {"exponent", number(fit.exponent)}}},
                {"stderr", {{"exponent", number(fit.stderr_exponent)},
                            {"log_coefficient", number(fit.stderr_log_coefficient)}}},
                {"window", {number(fit.window.lo), number(fit.window.hi)}},
                {"n_points", fit.n_points},
                {"excluded_points", fit.excluded_nonpositive},
                {"r_squared", number(fit.r_squared)}};
}

json to_json(const VolumeLawFit& fit) {
    return json{{"parameters", {{"a", number(fit.a)}, {"b", number(fit.b)}, {"gamma", number(fit.gamma)}}},
                {"stderr", {{"gamma", number(fit.stderr_gamma)}}},
                {"log_likelihood", number(fit.log_likelihood)},
                {"n", fit.n}};
}

json to_json(const KernelForm& form) {
    return json{{"parameters", {{"gamma0", number(form.gamma0)}, {"l0", number(form.l0)}, {"beta", number(form.beta)}}},
                {"stderr", {{"beta", number(form.stderr_beta)}}},
                {"window", {number(form.window.lo), number(form.window.hi)}},
                {"n_points", form.n_points},
                {"excluded_points", form.excluded_nonpositive},
                {"rms_log_residual", number(form.rms_log_residual)}};
}

json to_json(const InversionResult& inversion) {
    json j{{"L_max", inversion.kernel.max_lag()},
           {"horizon", inversion.horizon},
           {"lambda", number(inversion.ridge)},
           {"rcond", number(inversion.rcond)},
           {"extrapolation", inversion.kernel.extrapolation() == Extrapolation::hold_last ? "hold_last" : "power_tail"}};
    if (inversion.kernel.form()) j["form"] = to_json(*inversion.kernel.form());
    if (inversion.form_error) j["form_error"] = *inversion.form_error;
    return j;
}

json to_json(const CostDiagnostics& d) {
    return json{{"kappa", number(d.kappa)}, {"chi", number(d.chi)}, {"L", d.horizon}, {"include_lag0", d.include_lag0}};
}

json to_json(const KappaChiStudy& study) {
    json rows = json::array();
    for (const auto& r : study.rows) {
        rows.push_back(json{{"firm", to_int(r.firm)},
                            {"pi", number(r.pi)},
                            {"chi", number(r.chi)},
                            {"kappa_measured", number(r.kappa_measured)},
                            {"kappa_reconstructed", number(r.kappa_reconstructed)},
                            {"impact0", number(r.impact0)}});
    }
    return json{{"L", study.horizon},
                {"rows", rows},
                {"slope_measured", optional_number(study.slope_measured)},
                {"slope_reconstructed", optional_number(study.slope_reconstructed)},
                {"slope_impact", optional_number(study.slope_impact)},
                {"degenerate", study.degenerate}};
}

json to_json(const ShuffleReport& report) {
    json firms = json::array();
    for (const auto& f : report.firms) {
        json samples = json::array();
        for (const double a : f.alpha_shuffled) samples.push_back(number(a));
        firms.push_back(json{{"firm", to_int(f.firm)},
                             {"n_trades", f.n_trades},
                             {"alpha_real", optional_number(f.alpha_real)},
                             {"alpha_shuffled", samples},
                             {"band_mean", number(f.mean)},
                             {"band_std", number(f.stdev)},
                             {"failures", f.failures},
                             {"inside_firm_band", f.inside_firm_band},
                             {"inside_pooled_band", f.inside_pooled_band}});
    }
    return json{{"seed", report.seed},
                {"rng", report.rng},
                {"n_replicates", report.n_replicates},
                {"alpha_market", number(report.alpha_market)},
                {"pooled_band", {{"mean", number(report.pooled_mean)}, {"std", number(report.pooled_std)}}},
                {"exceedance_pooled", number(report.exceedance_pooled)},
                {"exceedance_firm", number(report.exceedance_firm)},
                {"n_evaluated", report.n_evaluated},
                {"firms", firms},
                {"failures", report.failures},
                {"warnings", report.warnings}};
}

json to_json(const IngestReport& report) {
    json errors = json::array();
    for (const auto& e : report.row_errors) errors.push_back(json{{"line", e.line}, {"message", e.message}});
    return json{{"raw_records", report.raw_records},
                {"row_errors", errors},
                {"aggregated_trades", report.aggregated_trades},
                {"dropped", report.dropped},
                {"dropped_fraction", number(report.dropped_fraction)},
                {"mismatch_warning", report.mismatch_warning},
                {"after_quotes_present", report.after_quotes_present},
                {"mean_spread", number(report.mean_spread)},
                {"warnings", report.warnings}};
}

json to_json(const FactorizationCheck& check) {
    json cells = json::array();
    for (std::size_t i = 0; i < check.lags.size(); ++i) {
        for (std::size_t k = 0; k < check.ratio[i].size(); ++k) {
            cells.push_back(json{{"lag", check.lags[i]},
                                 {"bin", k},
                                 {"ratio", number(check.ratio[i][k])},
                                 {"count", check.counts[i][k]},
                                 {"populated", static_cast<bool>(check.populated[i][k])}});
        }
    }
    json edges = json::array();
    for (const double e : check.bin_edges) edges.push_back(number(e));
    return json{{"lags", check.lags},
                {"bin_edges", edges},
                {"cells", cells},
                {"summary_max_abs_log_ratio", number(check.summary)},
                {"excluded_cells", check.excluded_cells}};
}

json to_json(const ImpactCurve& curve) {
    return json{{"scope", curve.scope.name()},
                {"n_trades", curve.n_trades},
                {"n_bins", curve.bins.size()},
                {"suppressed_bins", curve.suppressed_bins},
                {"mean_delta", number(curve.mean_delta)},
                {"mean_volume", number(curve.mean_volume)}};
}

json to_json(const ConstraintResiduals& residuals) {
    json rows = json::array();
    for (std::size_t i = 0; i < residuals.firms.size(); ++i) {
        rows.push_back(json{{"firm", to_int(residuals.firms[i])}, {"residual", number(residuals.residuals[i])}});
    }
    return json{{"residuals", rows}, {"rms", number(residuals.rms)}};
}

json to_json(const FirmSummary& f) {
    return json{{"firm", to_int(f.firm)},
                {"pi", number(f.pi)},
                {"n_trades", f.n_trades},
                {"alpha", optional_number(f.alpha)},
                {"alpha_stderr", optional_number(f.alpha_stderr)},
                {"c", optional_number(f.c)},
                {"mean_volume", number(f.mean_volume)},
                {"mean_impact", number(f.mean_impact)},
                {"predicted_impact", optional_number(f.predicted_impact)},
                {"kappa", optional_number(f.kappa)},
                {"chi", optional_number(f.chi)}};
}

}  // namespace impact
