#include "impact/measure.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "impact/error.hpp"
#include "impact/format.hpp"

namespace impact {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

// Running mean and variance.
struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) noexcept {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double std_error() const noexcept {
        if (n < 2) return 0.0;
        return std::sqrt(std::max(0.0, m2 / static_cast<double>(n - 1)) / static_cast<double>(n));
    }
};

std::vector<std::size_t> scope_ticks(const Tape& tape, const Scope& scope) {
    if (scope.is_market()) {
        std::vector<std::size_t> all(tape.size());
        for (std::size_t t = 0; t < all.size(); ++t) all[t] = t;
        return all;
    }
    const auto ticks = tape.ticks_of(*scope.firm);
    if (ticks.empty()) throw DataError("no trades in scope " + scope.name());
    return {ticks.begin(), ticks.end()};
}

void require_floor(const Tape& tape, const Scope& scope, bool enforce) {
    if (!enforce || scope.is_market()) return;
    const auto n = tape.trade_count(*scope.firm);
    if (n == 0) throw DataError("no trades in scope " + scope.name());
    if (n < tape.activity_floor()) {
        throw DataError(scope.name() + " has " + std::to_string(n) + " trades, below the activity floor of " +
                        std::to_string(tape.activity_floor()));
    }
}

std::vector<double> log_edges(double lo, double hi, std::size_t n_bins) {
    if (n_bins == 0) throw ConfigError("binning needs at least one bin");
    if (!(lo > 0.0)) throw DataError("log-spaced bins need positive values");
    if (lo == hi) return {lo * (1.0 - 1e-9), hi * (1.0 + 1e-9)};
    std::vector<double> edges(n_bins + 1);
    const double a = std::log(lo);
    const double b = std::log(hi);
    for (std::size_t k = 0; k <= n_bins; ++k) {
        edges[k] = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(n_bins));
    }
    edges.front() = lo;
    edges.back() = hi;
    return edges;
}

std::size_t bin_of(const std::vector<double>& edges, double v) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    if (it == edges.begin()) return 0;
    const auto k = static_cast<std::size_t>(it - edges.begin()) - 1;
    return std::min(k, edges.size() - 2);
}

void check_lag(const Tape& tape, std::size_t max_lag) {
    if (max_lag >= tape.size()) {
        throw ConfigError("lag horizon " + std::to_string(max_lag) + " must be below the tape length " +
                          std::to_string(tape.size()));
    }
}

void finish_flags(LagSeries& s, std::size_t min_samples) {
    s.flagged.resize(s.values.size());
    for (std::size_t l = 0; l < s.values.size(); ++l) s.flagged[l] = s.count[l] < min_samples;
}

}  // namespace

ImpactCurve impact_curve(const Tape& tape, Scope scope, const Binning& binning) {
    require_floor(tape, scope, binning.enforce_activity_floor);
    const auto ticks = scope_ticks(tape, scope);
    const auto vol = tape.volumes();
    const auto sgn = tape.signs();
    const auto qb = tape.quotes_before();
    const auto qa = tape.quotes_after();
    const double sigma = tape.sigma();

    ImpactCurve curve;
    curve.scope = scope;
    curve.n_trades = ticks.size();
    double vmin = std::numeric_limits<double>::infinity();
    double vmax = 0.0;
    double move_sum = 0.0;
    double vol_sum = 0.0;
    for (const auto t : ticks) {
        vmin = std::min(vmin, vol[t]);
        vmax = std::max(vmax, vol[t]);
        move_sum += (qa[t] - qb[t]) * sgn[t];
        vol_sum += vol[t];
    }
    const auto n = static_cast<double>(ticks.size());
    curve.mean_delta = move_sum / n / sigma;
    curve.mean_volume = vol_sum / n;
    curve.bin_edges = log_edges(vmin, vmax, binning.n_bins);

    const std::size_t nb = curve.bin_edges.size() - 1;
    std::vector<Moments> delta(nb);
    std::vector<double> vsum(nb, 0.0);
    for (const auto t : ticks) {
        const auto k = bin_of(curve.bin_edges, vol[t]);
        delta[k].add((qa[t] - qb[t]) * sgn[t] / sigma);
        vsum[k] += vol[t];
    }
    for (std::size_t k = 0; k < nb; ++k) {
        if (delta[k].n == 0) continue;
        if (delta[k].n < binning.min_bin_count) {
            ++curve.suppressed_bins;
            continue;
        }
        ImpactBin bin;
        bin.lo = curve.bin_edges[k];
        bin.hi = curve.bin_edges[k + 1];
        bin.count = delta[k].n;
        bin.mean_volume = vsum[k] / static_cast<double>(delta[k].n);
        bin.delta = delta[k].mean;
        bin.std_error = delta[k].std_error();
        curve.bins.push_back(bin);
    }
    return curve;
}

std::string to_string(SeriesKind kind) {
    switch (kind) {
        case SeriesKind::response: return "response";
        case SeriesKind::correlation: return "correlation";
        case SeriesKind::kernel: return "kernel";
    }
    return "unknown";
}

bool LagSeries::any_flagged() const {
    return std::any_of(flagged.begin(), flagged.end(), [](bool f) { return f; });
}

LagSeries LagSeries::from_values(SeriesKind kind, std::vector<double> values) {
    LagSeries s;
    s.kind = kind;
    s.count.assign(values.size(), 1);
    s.std_error.assign(values.size(), 0.0);
    s.flagged.assign(values.size(), false);
    s.values = std::move(values);
    return s;
}

LagSeries response(const Tape& tape, Scope scope, std::size_t max_lag, const LagOptions& options) {
    check_lag(tape, max_lag);
    const auto ticks = scope_ticks(tape, scope);
    const auto sgn = tape.signs();
    const auto qb = tape.quotes_before();
    const auto qa = tape.quotes_after();
    const std::size_t n = tape.size();

    std::vector<double> sum(max_lag + 1, 0.0);
    std::vector<double> sumsq(max_lag + 1, 0.0);
    std::vector<std::size_t> count(max_lag + 1, 0);
    for (const auto t : ticks) {
        const std::size_t top = std::min(max_lag, n - 1 - t);
        const double eps = sgn[t];
        const double base = qb[t];
        const double* after = qa.data() + t;
        for (std::size_t l = 0; l <= top; ++l) {
            const double x = (after[l] - base) * eps;
            sum[l] += x;
            sumsq[l] += x * x;
        }
        ++count[top];
    }
    // count[top] holds how many t stop at `top`; turn it into per-lag counts.
    for (std::size_t l = max_lag; l-- > 0;) count[l] += count[l + 1];

    LagSeries s;
    s.kind = SeriesKind::response;
    s.scope = scope;
    s.values.resize(max_lag + 1);
    s.std_error.resize(max_lag + 1);
    s.count = count;
    const double sigma = tape.sigma();
    for (std::size_t l = 0; l <= max_lag; ++l) {
        if (count[l] == 0) {
            s.values[l] = nan;
            s.std_error[l] = nan;
            continue;
        }
        const auto m = static_cast<double>(count[l]);
        const double mean = sum[l] / m;
        s.values[l] = mean / sigma;
        const double var = m > 1 ? std::max(0.0, (sumsq[l] - m * mean * mean) / (m - 1)) : 0.0;
        s.std_error[l] = std::sqrt(var / m) / sigma;
    }
    finish_flags(s, options.min_samples);
    return s;
}

LagSeries sign_correlation(const Tape& tape, Scope scope, std::size_t max_lag, const LagOptions& options) {
    check_lag(tape, max_lag);
    const auto ticks = scope_ticks(tape, scope);
    const auto sgn = tape.signs();
    const std::size_t n = tape.size();

    std::vector<std::int64_t> sum(max_lag + 1, 0);
    std::vector<std::size_t> count(max_lag + 1, 0);
    std::int64_t scope_sign_sum = 0;
    for (const auto t : ticks) {
        const std::size_t top = std::min(max_lag, n - 1 - t);
        const int eps = sgn[t];
        scope_sign_sum += eps;
        const int* ahead = sgn.data() + t;
        for (std::size_t l = 0; l <= top; ++l) sum[l] += eps * ahead[l];
        ++count[top];
    }
    for (std::size_t l = max_lag; l-- > 0;) count[l] += count[l + 1];

    double shift = 0.0;
    if (options.connected) {
        std::int64_t total = 0;
        for (const int e : sgn) total += e;
        shift = static_cast<double>(scope_sign_sum) / static_cast<double>(ticks.size()) *
                (static_cast<double>(total) / static_cast<double>(n));
    }

    LagSeries s;
    s.kind = SeriesKind::correlation;
    s.scope = scope;
    s.values.resize(max_lag + 1);
    s.std_error.resize(max_lag + 1);
    s.count = count;
    for (std::size_t l = 0; l <= max_lag; ++l) {
        if (count[l] == 0) {
            s.values[l] = nan;
            s.std_error[l] = nan;
            continue;
        }
        const auto m = static_cast<double>(count[l]);
        const double mean = static_cast<double>(sum[l]) / m;
        s.values[l] = mean - shift;
        // Products are +-1, so the sample variance follows from the mean alone.
        const double var = m > 1 ? std::max(0.0, (1.0 - mean * mean) * m / (m - 1)) : 0.0;
        s.std_error[l] = std::sqrt(var / m);
    }
    finish_flags(s, options.min_samples);
    return s;
}

double admissible_share(const Tape& tape, FirmId firm, std::size_t lag) {
    if (lag >= tape.size()) throw ConfigError("lag must be below the tape length");
    const auto ticks = tape.ticks_of(firm);
    const std::size_t last = tape.size() - 1 - lag;
    const auto inside = static_cast<std::size_t>(std::upper_bound(ticks.begin(), ticks.end(), last) - ticks.begin());
    return static_cast<double>(inside) / static_cast<double>(tape.size() - lag);
}

VolumeDistribution volume_distribution(std::vector<double> samples, std::size_t n_bins) {
    if (samples.empty()) throw DataError("volume distribution of an empty sample");
    double sum = 0.0;
    for (const double v : samples) {
        if (!(v > 0.0) || !std::isfinite(v)) throw DataError("volume samples must be positive and finite");
        sum += v;
    }
    VolumeDistribution d;
    d.mean_volume = sum / static_cast<double>(samples.size());
    for (double& v : samples) v /= d.mean_volume;
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    d.bin_edges = log_edges(*lo, *hi, n_bins);
    const std::size_t nb = d.bin_edges.size() - 1;
    d.counts.assign(nb, 0);
    for (const double x : samples) ++d.counts[bin_of(d.bin_edges, x)];
    d.density.resize(nb);
    const auto total = static_cast<double>(samples.size());
    for (std::size_t k = 0; k < nb; ++k) {
        d.density[k] = static_cast<double>(d.counts[k]) / (total * (d.bin_edges[k + 1] - d.bin_edges[k]));
    }
    d.scaled_samples = std::move(samples);
    return d;
}

VolumeDistribution volume_distribution(const Tape& tape, Scope scope, std::size_t n_bins) {
    const auto ticks = scope_ticks(tape, scope);
    const auto vol = tape.volumes();
    std::vector<double> samples;
    samples.reserve(ticks.size());
    for (const auto t : ticks) samples.push_back(vol[t]);
    auto d = volume_distribution(std::move(samples), n_bins);
    d.scope = scope;
    return d;
}

double sup_cdf_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DataError("CDF distance needs two non-empty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const auto na = static_cast<double>(a.size());
    const auto nb = static_cast<double>(b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double best = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return best;
}

FactorizationCheck factorization_check(const Tape& tape, const std::vector<std::size_t>& lags,
                                       const Binning& binning) {
    if (lags.empty()) throw ConfigError("factorization check needs at least one lag");
    const std::size_t max_lag = *std::max_element(lags.begin(), lags.end());
    check_lag(tape, max_lag);
    const auto market = response(tape, Scope::market(), max_lag);
    const auto curve = impact_curve(tape, Scope::market(), Binning{binning.n_bins, 1, false});

    const auto sgn = tape.signs();
    const auto qb = tape.quotes_before();
    const auto qa = tape.quotes_after();
    const auto vol = tape.volumes();
    const double sigma = tape.sigma();
    const std::size_t n = tape.size();

    FactorizationCheck out;
    out.lags = lags;
    out.bin_edges = curve.bin_edges;
    const std::size_t nb = out.bin_edges.size() - 1;

    std::vector<double> delta_sum(nb, 0.0);
    std::vector<std::size_t> delta_n(nb, 0);
    std::vector<std::size_t> bin(n);
    for (std::size_t t = 0; t < n; ++t) {
        bin[t] = bin_of(out.bin_edges, vol[t]);
        delta_sum[bin[t]] += (qa[t] - qb[t]) * sgn[t];
        ++delta_n[bin[t]];
    }
    const double r0 = market.values[0];
    for (const auto l : lags) {
        std::vector<double> sum(nb, 0.0);
        std::vector<std::size_t> cnt(nb, 0);
        for (std::size_t t = 0; t + l < n; ++t) {
            sum[bin[t]] += (qa[t + l] - qb[t]) * sgn[t];
            ++cnt[bin[t]];
        }
        std::vector<double> ratio(nb, nan);
        std::vector<bool> ok(nb, false);
        for (std::size_t k = 0; k < nb; ++k) {
            if (cnt[k] == 0 || delta_n[k] == 0) continue;
            const double rlv = sum[k] / static_cast<double>(cnt[k]) / sigma;
            const double dv = delta_sum[k] / static_cast<double>(delta_n[k]) / sigma;
            ratio[k] = rlv * r0 / (dv * market.values[l]);
            ok[k] = cnt[k] >= binning.min_bin_count && std::isfinite(ratio[k]) && ratio[k] > 0.0;
            if (ok[k]) out.summary = std::max(out.summary, std::abs(std::log(ratio[k])));
            else ++out.excluded_cells;
        }
        out.ratio.push_back(std::move(ratio));
        out.counts.push_back(std::move(cnt));
        out.populated.push_back(std::move(ok));
    }
    return out;
}

void write_csv(std::ostream& out, const LagSeries& series) {
    out << "bin_or_lag,value,count,stderr\n";
    for (std::size_t l = 0; l < series.values.size(); ++l) {
        out << l << ',' << format_double(series.values[l]) << ',' << series.count[l] << ','
            << format_double(series.std_error[l]) << '\n';
    }
}

void write_csv(std::ostream& out, const ImpactCurve& curve) {
    out << "bin_or_lag,value,count,stderr\n";
    for (const auto& b : curve.bins) {
        out << format_double(b.mean_volume) << ',' << format_double(b.delta) << ',' << b.count << ','
            << format_double(b.std_error) << '\n';
    }
}

LagSeries read_lag_series(std::istream& in, SeriesKind kind) {
    LagSeries s;
    s.kind = kind;
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
        if (f.size() < 2) throw DataError("series line " + std::to_string(lineno) + ": expected at least 2 fields");
        const auto lag = parse_int(f[0]);
        const auto value = parse_double(f[1]);
        if (!lag || !value) throw DataError("series line " + std::to_string(lineno) + ": unparseable field");
        if (*lag != static_cast<std::int64_t>(s.values.size())) {
            throw DataError("series line " + std::to_string(lineno) + ": lags must run 0,1,2,... without gaps");
        }
        s.values.push_back(*value);
        std::size_t count = 1;
        double se = 0.0;
        if (f.size() >= 3) {
            const auto c = parse_int(f[2]);
            if (!c || *c < 0) throw DataError("series line " + std::to_string(lineno) + ": bad count");
            count = static_cast<std::size_t>(*c);
        }
        if (f.size() >= 4) {
            const auto e = parse_double(f[3]);
            if (!e) throw DataError("series line " + std::to_string(lineno) + ": bad stderr");
            se = *e;
        }
        s.count.push_back(count);
        s.std_error.push_back(se);
        s.flagged.push_back(false);
    }
    if (s.values.empty()) throw DataError("series file contains no rows");
    return s;
}

}  // namespace impact
