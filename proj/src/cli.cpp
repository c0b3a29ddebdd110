#include "impact/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "impact/error.hpp"
#include "impact/fit.hpp"
#include "impact/measure.hpp"
#include "impact/nullmodel.hpp"
#include "impact/report.hpp"
#include "impact/rng.hpp"
#include "impact/synth.hpp"
#include "impact/tape.hpp"

namespace impact::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    for (const auto part : split(text, ',')) {
        if (!part.empty()) out.emplace_back(part);
    }
    return out;
}

std::size_t to_size(std::int64_t v, const char* key) {
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
}

}  // namespace

StudyConfig StudyConfig::from(const KeyValues& kv) {
    StudyConfig c;
    if (const auto v = kv.integer("activity_floor")) c.activity_floor = to_size(*v, "activity_floor");
    if (const auto v = kv.integer("bins")) c.bins = to_size(*v, "bins");
    if (const auto v = kv.integer("min_bin_count")) c.min_bin_count = to_size(*v, "min_bin_count");
    if (const auto v = kv.integer("min_samples")) c.min_samples = to_size(*v, "min_samples");
    if (const auto v = kv.integer("lag")) c.lag = to_size(*v, "lag");
    if (const auto v = kv.number("corr_window_lo")) c.corr_window_lo = *v;
    if (const auto v = kv.number("corr_window_hi")) c.corr_window_hi = *v;
    if (const auto v = kv.integer("lmax")) c.lmax = to_size(*v, "lmax");
    if (const auto v = kv.integer("horizon")) c.horizon = to_size(*v, "horizon");
    if (const auto v = kv.number("ridge")) c.ridge = *v;
    if (const auto v = kv.text("convention")) c.convention = parse_convention(*v);
    if (const auto v = kv.number("kernel_window_lo")) c.kernel_window_lo = *v;
    if (const auto v = kv.number("kernel_window_hi")) c.kernel_window_hi = *v;
    if (const auto v = kv.integer("replicates")) c.replicates = to_size(*v, "replicates");
    if (const auto v = kv.integer("seed")) c.seed = static_cast<std::uint64_t>(*v);
    if (const auto v = kv.number("v0")) c.v0 = *v;
    if (const auto v = kv.number("delta0")) c.delta0 = *v;
    if (const auto v = kv.text("factorization_lags")) {
        c.factorization_lags.clear();
        for (const auto& s : split_list(*v)) {
            const auto n = parse_int(s);
            if (!n || *n < 1) throw ConfigError("factorization_lags must be positive integers");
            c.factorization_lags.push_back(static_cast<std::size_t>(*n));
        }
    }
    if (const auto v = kv.text("stages")) c.stages = split_list(*v);
    if (const auto v = kv.flag("include_lag0")) c.include_lag0 = *v;
    return c;
}

bool StudyConfig::wants(const std::string& stage) const {
    return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

namespace {

const std::vector<std::string> known_stages{"market", "firms", "kernel", "kappa", "null", "factorization"};

// Failure inside a named stage of a command.
struct StageFailure {
    std::string stage;
    std::string message;
    int code;
};

int code_for(const std::exception& e) {
    if (dynamic_cast<const NumericalError*>(&e)) return numerical_error;
    if (dynamic_cast<const DataError*>(&e)) return data_error;
    if (dynamic_cast<const ConfigError*>(&e)) return usage_error;
    return data_error;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
}

std::ifstream open_in(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p);
    return in;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& p, const json& j) {
    auto out = open_out(p);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + p.string());
}

// Collects products and warnings and writes summary.json at the end of a command.
class Session {
public:
    Session(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {}

    const fs::path& dir() const { return out_; }
    void product(const std::string& name) { products_.push_back(name); }
    void warn(std::string message) { warnings_.push_back(std::move(message)); }
    json& results() { return results_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    template <class Writer>
    void write(const std::string& name, Writer&& writer) {
        const fs::path p = out_ / name;
        if (p.has_parent_path()) ensure_dir(p.parent_path());
        auto out = open_out(p);
        writer(out);
        if (!out) throw IoError("failed writing " + p.string());
        product(name);
    }

    void finish(int code, const std::optional<StageFailure>& failure) {
        json j{{"command", command_}, {"status", code == success ? "ok" : "error"}, {"exit_code", code}};
        if (failure) j["failure"] = json{{"stage", failure->stage}, {"message", failure->message}};
        j["results"] = results_;
        j["warnings"] = warnings_;
        j["products"] = products_;
        try {
            ensure_dir(out_);
            write_json(out_ / "summary.json", j);
        } catch (const Error&) {
            // Nothing more can be reported when the output directory is unusable.
        }
    }

private:
    std::string command_;
    fs::path out_;
    std::vector<std::string> products_;
    std::vector<std::string> warnings_;
    json results_ = json::object();
};

// Runs `body` as stage `name`, converting library errors into a StageFailure.
template <class Body>
void stage(const std::string& name, Body&& body) {
    try {
        body();
    } catch (const StageFailure&) {
        throw;
    } catch (const Error& e) {
        throw StageFailure{name, e.what(), code_for(e)};
    }
}

// Evaluates an optional estimate; failures become warnings and a null value.
template <class F>
auto soft(Session& s, const std::string& what, F&& f) -> std::optional<decltype(f())> {
    try {
        return f();
    } catch (const Error& e) {
        s.warn(what + ": " + e.what());
        return std::nullopt;
    }
}

Tape load_tape(const std::string& path, std::optional<std::size_t> floor) {
    auto in = open_in(path);
    ProcessedReadOptions opt;
    if (floor) opt.activity_floor = *floor;
    return read_processed(in, opt);
}

std::string fmt(const std::optional<double>& v) { return v ? format_double(*v) : std::string("n/a"); }

std::string trend(const std::optional<double>& slope) {
    if (!slope) return "n/a";
    return *slope > 0 ? "increasing" : (*slope < 0 ? "decreasing" : "flat");
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
    std::string input;
    std::string config;
    std::string out;
    std::string format = "raw";
    std::optional<std::string> quote_mode;
    std::optional<std::size_t> activity_floor;
    std::optional<double> mismatch_threshold;
    std::optional<double> mean_spread;
    std::optional<std::string> label;
    bool compare_raw = false;
};

void cmd_ingest(const IngestArgs& a, Session& s) {
    TapeConfig config;
    if (!a.config.empty()) config = TapeConfig::from(KeyValues::load(a.config));
    if (a.quote_mode) config.quote_mode = parse_quote_mode(*a.quote_mode);
    if (a.activity_floor) config.activity_floor = *a.activity_floor;
    if (a.mismatch_threshold) config.mismatch_threshold = *a.mismatch_threshold;
    if (a.mean_spread) config.mean_spread = *a.mean_spread;
    if (a.label) config.label = *a.label;

    if (a.format == "processed") {
        stage("ingest", [&] {
            auto in = open_in(a.input);
            ProcessedReadOptions opt;
            opt.activity_floor = config.activity_floor;
            if (a.label) opt.label = a.label;
            if (a.mean_spread) opt.mean_spread = a.mean_spread;
            const Tape tape = read_processed(in, opt);
            s.write("tape.csv", [&](std::ostream& o) { write_processed(o, tape); });
            s.results()["trades"] = tape.size();
            s.results()["firms"] = tape.firms().size();
        });
        return;
    }
    if (a.format != "raw") throw ConfigError("--format must be 'raw' or 'processed'");

    stage("ingest", [&] {
        auto in = open_in(a.input);
        Ingested ing = ingest_raw(in, config);
        for (const auto& w : ing.report.warnings) s.warn(w);
        s.write("tape.csv", [&](std::ostream& o) { write_processed(o, ing.tape); });
        write_json(s.dir() / "ingest_report.json", to_json(ing.report));
        s.product("ingest_report.json");
        s.results()["ingest"] = to_json(ing.report);
        s.results()["trades"] = ing.tape.size();
        s.results()["firms"] = ing.tape.firms().size();
        s.results()["eligible_firms"] = ing.tape.eligible_firms().size();

        if (a.compare_raw) {
            const auto alpha = [&](const Tape& t) {
                return soft(s, "market impact fit on " + t.label(), [&] {
                    return fit_power_law(impact_curve(t, Scope::market())).exponent;
                });
            };
            auto raw_trades = filter_mismatches(records_as_trades(ing.records, config.quote_mode),
                                                config.mismatch_threshold);
            const Tape raw = build_tape(std::move(raw_trades.trades), config.label + "_raw", ing.report.mean_spread,
                                        config.activity_floor);
            const auto a_raw = alpha(raw);
            const auto a_proc = alpha(ing.tape);
            s.results()["comparison"] = json{{"alpha_raw_records", a_raw ? number(*a_raw) : json(nullptr)},
                                             {"alpha_processed", a_proc ? number(*a_proc) : json(nullptr)},
                                             {"raw_trades", raw.size()}};
        }
    });
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string manifest;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool raw = false;
};

void cmd_simulate(const SimulateArgs& a, Session& s) {
    stage("simulate", [&] {
        SyntheticManifest m = load_manifest(a.manifest);
        m.seed = *a.seed;
        const EmitPaths paths = emit_tape(m, s.dir(), a.raw);
        s.product("tape.csv");
        s.product("manifest.json");
        if (paths.raw) s.product("raw.csv");
        auto in = open_in(paths.tape.string());
        const Tape tape = read_processed(in, ProcessedReadOptions{std::nullopt, std::nullopt, m.activity_floor});
        s.results()["trades"] = tape.size();
        s.results()["firms"] = tape.firms().size();
        s.results()["seed"] = m.seed;
        s.results()["rng"] = std::string(Rng::algorithm);
    });
}

// ---------------------------------------------------------------- shuffle

struct ShuffleArgs {
    std::string tape;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t replicates = 0;
    std::optional<std::size_t> activity_floor;
    std::size_t bins = 25;
    std::size_t min_bin_count = 50;
};

void cmd_shuffle(const ShuffleArgs& a, Session& s) {
    stage("shuffle", [&] {
        const Tape tape = load_tape(a.tape, a.activity_floor);
        const Tape shuffled = shuffle_ids(tape, *a.seed);
        s.write("tape.csv", [&](std::ostream& o) { write_processed(o, shuffled); });
        s.results()["seed"] = *a.seed;
        s.results()["rng"] = std::string(Rng::algorithm);
        s.results()["trades"] = tape.size();
        if (a.replicates > 0) {
            const auto report = null_band(tape, a.replicates, *a.seed,
                                          impact_exponent_estimator(Binning{a.bins, a.min_bin_count, true}));
            for (const auto& w : report.warnings) s.warn(w);
            write_json(s.dir() / "null_band.json", to_json(report));
            s.product("null_band.json");
            s.results()["exceedance_pooled"] = number(report.exceedance_pooled);
            s.results()["exceedance_firm"] = number(report.exceedance_firm);
            s.results()["alpha_market"] = number(report.alpha_market);
        }
    });
}

// ---------------------------------------------------------------- invert

struct InvertArgs {
    std::string tape;
    std::string response;
    std::string correlation;
    std::string out;
    std::size_t lmax = 1000;
    std::size_t horizon = 0;
    double ridge = 0.0;
    std::string convention = "post_trade";
    std::vector<double> fit_window;
    std::optional<double> r0;
};

void cmd_invert(const InvertArgs& a, Session& s) {
    stage("kernel", [&] {
        InversionOptions opt;
        opt.horizon = a.horizon;
        opt.ridge = a.ridge;
        opt.convention = parse_convention(a.convention);
        if (a.fit_window.size() == 2) opt.fit_window = FitWindow{a.fit_window[0], a.fit_window[1]};

        std::optional<LagSeries> r, c;
        if (!a.tape.empty()) {
            const Tape tape = load_tape(a.tape, std::nullopt);
            r = response(tape, Scope::market(), a.lmax);
            c = sign_correlation(tape, Scope::market(), a.lmax);
        } else {
            if (a.response.empty() || a.correlation.empty()) {
                throw ConfigError("invert needs --tape or both --response and --correlation");
            }
            auto rin = open_in(a.response);
            auto cin = open_in(a.correlation);
            r = read_lag_series(rin, SeriesKind::response);
            c = read_lag_series(cin, SeriesKind::correlation);
        }
        const double r0 = a.r0.value_or(r->values.at(0));
        const auto inv = invert_kernel(*r, *c, r0, a.lmax, opt);
        if (inv.form_error) s.warn("kernel form fit: " + *inv.form_error);
        s.write("kernel.csv", [&](std::ostream& o) { write_kernel_csv(o, inv.kernel); });
        json j = to_json(inv);
        j["convention"] = to_string(opt.convention);
        write_json(s.dir() / "kernel.json", j);
        s.product("kernel.json");
        s.results()["kernel"] = j;
    });
}

// ---------------------------------------------------------------- fit

struct FitArgs {
    std::string input;
    std::string kind;
    std::string out;
    std::vector<double> window;
    std::optional<std::int64_t> firm;
};

void cmd_fit(const FitArgs& a, Session& s) {
    stage("fit", [&] {
        std::optional<FitWindow> window;
        if (a.window.size() == 2) window = FitWindow{a.window[0], a.window[1]};
        json result;
        if (a.kind == "impact") {
            auto in = open_in(a.input);
            std::vector<double> x, y, w;
            std::string line;
            bool header = false;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                const auto v = trim(line);
                if (v.empty() || v.front() == '#') continue;
                if (!header) {
                    header = true;
                    continue;
                }
                const auto f = split(v, ',');
                const auto xv = f.size() >= 2 ? parse_double(f[0]) : std::nullopt;
                const auto yv = f.size() >= 2 ? parse_double(f[1]) : std::nullopt;
                if (!xv || !yv) throw DataError(a.input + " line " + std::to_string(lineno) + ": unparseable");
                const auto cv = f.size() >= 3 ? parse_double(f[2]) : std::optional<double>(1.0);
                if (!cv) throw DataError(a.input + " line " + std::to_string(lineno) + ": bad count");
                x.push_back(*xv);
                y.push_back(*yv);
                w.push_back(*cv);
            }
            if (x.empty()) throw DataError(a.input + " contains no rows");
            const FitWindow win = window.value_or(FitWindow{*std::min_element(x.begin(), x.end()),
                                                            *std::max_element(x.begin(), x.end())});
            result = to_json(fit_power_law(x, y, w, win));
        } else if (a.kind == "series") {
            auto in = open_in(a.input);
            const auto series = read_lag_series(in, SeriesKind::correlation);
            result = to_json(fit_power_law(series, window.value_or(default_lag_window)));
        } else if (a.kind == "kernel") {
            auto in = open_in(a.input);
            const Kernel k = read_kernel_csv(in);
            result = to_json(fit_kernel_form(k, window.value_or(FitWindow{1.0, static_cast<double>(k.max_lag())})));
        } else if (a.kind == "volume") {
            const Tape tape = load_tape(a.input, std::nullopt);
            const Scope scope = a.firm ? Scope::of(firm_id(*a.firm)) : Scope::market();
            const auto d = volume_distribution(tape, scope);
            result = to_json(scaling_function_fit(d.scaled_samples));
            result["scope"] = scope.name();
            result["mean_volume"] = number(d.mean_volume);
        } else {
            throw ConfigError("--kind must be one of impact, series, kernel, volume");
        }
        write_json(s.dir() / "fit.json", result);
        s.product("fit.json");
        s.results()["fit"] = result;
    });
}

// ---------------------------------------------------------------- study

struct StudyArgs {
    std::string tape;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> activity_floor;
    std::optional<std::size_t> bins;
    std::optional<std::size_t> min_bin_count;
    std::optional<std::size_t> lag;
    std::optional<std::size_t> lmax;
    std::optional<std::size_t> horizon;
    std::optional<double> ridge;
    std::optional<std::string> convention;
    std::optional<std::size_t> replicates;
    std::optional<std::string> stages;
    std::optional<double> v0;
    std::optional<double> delta0;
};

StudyConfig study_config(const StudyArgs& a) {
    StudyConfig c = a.config.empty() ? StudyConfig{} : StudyConfig::from(KeyValues::load(a.config));
    if (a.seed) c.seed = a.seed;
    if (a.activity_floor) c.activity_floor = a.activity_floor;
    if (a.bins) c.bins = *a.bins;
    if (a.min_bin_count) c.min_bin_count = *a.min_bin_count;
    if (a.lag) c.lag = *a.lag;
    if (a.lmax) c.lmax = *a.lmax;
    if (a.horizon) c.horizon = *a.horizon;
    if (a.ridge) c.ridge = *a.ridge;
    if (a.convention) c.convention = parse_convention(*a.convention);
    if (a.replicates) c.replicates = *a.replicates;
    if (a.stages) c.stages = split_list(*a.stages);
    if (a.v0) c.v0 = a.v0;
    if (a.delta0) c.delta0 = a.delta0;
    for (const auto& st : c.stages) {
        if (std::find(known_stages.begin(), known_stages.end(), st) == known_stages.end()) {
            throw ConfigError("unknown study stage '" + st + "'");
        }
    }
    if (c.bins == 0) throw ConfigError("bins must be positive");
    if (c.lag == 0 || c.lmax < 2) throw ConfigError("lag must be positive and lmax at least 2");
    if (c.ridge < 0.0) throw ConfigError("ridge must be non-negative");
    if (!(c.corr_window_lo < c.corr_window_hi)) throw ConfigError("correlation window must be increasing");
    if (c.wants("null") && c.replicates > 0 && !c.seed) {
        throw ConfigError("the null stage is randomized: pass --seed (or drop it from --stages)");
    }
    if (c.v0.has_value() != c.delta0.has_value()) throw ConfigError("v0 and delta0 must be given together");
    return c;
}

void write_volume_csv(std::ostream& o, const VolumeDistribution& d) {
    o << "bin_lo,bin_hi,density,count\n";
    for (std::size_t k = 0; k < d.density.size(); ++k) {
        o << format_double(d.bin_edges[k]) << ',' << format_double(d.bin_edges[k + 1]) << ','
          << format_double(d.density[k]) << ',' << d.counts[k] << '\n';
    }
}

void cmd_study(const StudyArgs& a, Session& s) {
    const StudyConfig cfg = study_config(a);
    std::optional<Tape> tape_holder;
    stage("load", [&] { tape_holder.emplace(load_tape(a.tape, cfg.activity_floor)); });
    const Tape& tape = *tape_holder;
    const Binning binning{cfg.bins, cfg.min_bin_count, true};
    const LagOptions lag_opt{cfg.min_samples, false};

    // Horizons cannot reach the end of a short tape.
    const std::size_t cap = std::max<std::size_t>(1, tape.size() / 2);
    std::size_t lag = cfg.lag;
    std::size_t lmax = cfg.lmax;
    if (lag > cap) {
        s.warn("lag horizon reduced from " + std::to_string(lag) + " to " + std::to_string(cap) + " for a tape of " +
               std::to_string(tape.size()) + " trades");
        lag = cap;
    }
    if (lmax > cap) {
        s.warn("L_max reduced from " + std::to_string(lmax) + " to " + std::to_string(cap));
        lmax = std::max<std::size_t>(2, cap);
    }
    const std::size_t measure_lag = std::min(std::max(lag, lmax), tape.size() - 1);

    json& res = s.results();
    res["tape"] = json{{"label", tape.label()},
                       {"trades", tape.size()},
                       {"firms", tape.firms().size()},
                       {"eligible_firms", tape.eligible_firms().size()},
                       {"activity_floor", tape.activity_floor()},
                       {"mean_spread", number(tape.mean_spread())}};
    res["config"] = json{{"bins", cfg.bins},
                         {"min_bin_count", cfg.min_bin_count},
                         {"lag", lag},
                         {"lmax", lmax},
                         {"horizon", cfg.horizon ? cfg.horizon : 4 * lmax},
                         {"ridge", cfg.ridge},
                         {"convention", to_string(cfg.convention)},
                         {"correlation_window", {cfg.corr_window_lo, cfg.corr_window_hi}},
                         {"replicates", cfg.replicates},
                         {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
                         {"stages", cfg.stages}};

    std::optional<LagSeries> r_market, c_market;
    std::optional<double> alpha_m, gamma_c, gamma_v, alpha_bar, beta, beta_c, exceed;
    std::optional<KappaChiStudy> kappa;
    std::optional<Kernel> kernel;

    if (cfg.wants("market")) {
        stage("market", [&] {
            const auto curve = impact_curve(tape, Scope::market(), binning);
            s.write("market_impact.csv", [&](std::ostream& o) { write_csv(o, curve); });
            json m = to_json(curve);
            if (const auto f = soft(s, "market impact fit", [&] { return fit_power_law(curve); })) {
                alpha_m = f->exponent;
                m["impact_fit"] = to_json(*f);
            }
            r_market = response(tape, Scope::market(), measure_lag, lag_opt);
            c_market = sign_correlation(tape, Scope::market(), measure_lag, lag_opt);
            s.write("market_response.csv", [&](std::ostream& o) { write_csv(o, *r_market); });
            s.write("market_correlation.csv", [&](std::ostream& o) { write_csv(o, *c_market); });
            m["response0"] = number(r_market->values[0]);
            const FitWindow cw{cfg.corr_window_lo, std::min<double>(cfg.corr_window_hi, static_cast<double>(measure_lag))};
            if (const auto f = soft(s, "correlation exponent fit",
                                    [&] { return fit_power_law(*c_market, cw); })) {
                gamma_c = -f->exponent;
                m["correlation_fit"] = to_json(*f);
            }
            const auto vd = volume_distribution(tape, Scope::market());
            s.write("volume_distribution.csv", [&](std::ostream& o) { write_volume_csv(o, vd); });
            if (const auto f = soft(s, "volume law fit", [&] { return scaling_function_fit(vd.scaled_samples); })) {
                gamma_v = f->gamma;
                m["volume_fit"] = to_json(*f);
            }
            m["cost"] = to_json(cost_diagnostics(*r_market, *c_market, lag, cfg.include_lag0));
            res["market"] = m;
        });
    }

    std::vector<FirmSummary> firms;
    if (cfg.wants("firms")) {
        stage("firms", [&] {
            const auto eligible = tape.eligible_firms();
            if (eligible.empty()) {
                s.warn("no firm meets the activity floor of " + std::to_string(tape.activity_floor()) +
                       " trades; per-firm stages skipped");
                return;
            }
            for (const FirmId id : eligible) {
                const Scope scope = Scope::of(id);
                const std::string tag = std::to_string(to_int(id));
                FirmSummary f;
                f.firm = id;
                f.pi = tape.participation(id);
                f.n_trades = tape.trade_count(id);
                const auto curve = impact_curve(tape, scope, binning);
                s.write("firms/impact_" + tag + ".csv", [&](std::ostream& o) { write_csv(o, curve); });
                f.mean_volume = curve.mean_volume;
                f.mean_impact = curve.mean_delta;
                if (const auto fit = soft(s, "impact fit for " + scope.name(), [&] { return fit_power_law(curve); })) {
                    f.alpha = fit->exponent;
                    f.c = fit->coefficient;
                    f.alpha_stderr = fit->stderr_exponent;
                    if (gamma_v) {
                        f.predicted_impact = soft(s, "predicted impact for " + scope.name(), [&] {
                            return predicted_mean_impact(*f.c, *f.alpha, f.mean_volume, *gamma_v);
                        });
                    }
                }
                const auto r = response(tape, scope, lag, lag_opt);
                const auto c = sign_correlation(tape, scope, lag, lag_opt);
                s.write("firms/response_" + tag + ".csv", [&](std::ostream& o) { write_csv(o, r); });
                s.write("firms/correlation_" + tag + ".csv", [&](std::ostream& o) { write_csv(o, c); });
                if (const auto d = soft(s, "cost diagnostics for " + scope.name(),
                                        [&] { return cost_diagnostics(r, c, lag, cfg.include_lag0); })) {
                    f.kappa = d->kappa;
                    f.chi = d->chi;
                }
                firms.push_back(f);
            }
            json list = json::array();
            for (const auto& f : firms) list.push_back(to_json(f));
            res["firms"] = list;
            if (const auto x = soft(s, "cross-firm statistics", [&] { return cross_firm_statistics(firms); })) {
                alpha_bar = x->alpha_bar;
                res["cross_firm"] = json{{"alpha_bar", number(x->alpha_bar)},
                                         {"covered_fraction", number(x->covered_fraction)},
                                         {"n_fitted", x->n_fitted},
                                         {"impact_volume_fit", x->impact_volume ? to_json(*x->impact_volume) : json(nullptr)}};
            }
            if (cfg.v0 && cfg.delta0) {
                const auto cr = constraint_relation(firms, *cfg.v0, *cfg.delta0);
                s.write("constraint_residuals.csv", [&](std::ostream& o) {
                    o << "firm,residual\n";
                    for (std::size_t i = 0; i < cr.firms.size(); ++i) {
                        o << to_int(cr.firms[i]) << ',' << format_double(cr.residuals[i]) << '\n';
                    }
                });
                res["constraint"] = to_json(cr);
            }
        });
    }

    if (cfg.wants("kernel")) {
        stage("kernel", [&] {
            if (!r_market || !c_market) throw ConfigError("the kernel stage needs the market stage");
            InversionOptions opt;
            opt.horizon = cfg.horizon;
            opt.ridge = cfg.ridge;
            opt.convention = cfg.convention;
            opt.fit_window = FitWindow{cfg.kernel_window_lo.value_or(1.0),
                                       std::min(cfg.kernel_window_hi.value_or(static_cast<double>(lmax)),
                                                static_cast<double>(lmax))};
            const auto inv = invert_kernel(*r_market, *c_market, r_market->values[0], lmax, opt);
            if (inv.form_error) s.warn("kernel form fit: " + *inv.form_error);
            if (inv.kernel.form()) beta = inv.kernel.form()->beta;
            if (gamma_c) beta_c = soft(s, "critical beta", [&] { return critical_beta(*gamma_c); });
            s.write("kernel.csv", [&](std::ostream& o) { write_kernel_csv(o, inv.kernel); });
            json k = to_json(inv);
            k["convention"] = to_string(cfg.convention);
            k["beta_critical"] = beta_c ? number(*beta_c) : json(nullptr);
            write_json(s.dir() / "kernel.json", k);
            s.product("kernel.json");
            res["kernel"] = k;
            kernel = inv.kernel;
        });
    }

    if (cfg.wants("kappa")) {
        stage("kappa", [&] {
            if (!kernel) {
                s.warn("kappa/chi study skipped: no kernel available");
                return;
            }
            const auto eligible = tape.eligible_firms();
            if (eligible.empty()) {
                s.warn("kappa/chi study skipped: no eligible firms");
                return;
            }
            PropagatorOptions popt{cfg.horizon, cfg.convention};
            kappa = kappa_chi_study(tape, eligible, *kernel, lag, popt);
            if (kappa->degenerate) s.warn("kappa/chi study has fewer than two distinct firms: no trend");
            s.write("kappa_chi.csv", [&](std::ostream& o) {
                o << "firm,pi,chi,kappa_measured,kappa_reconstructed,impact0\n";
                for (const auto& r : kappa->rows) {
                    o << to_int(r.firm) << ',' << format_double(r.pi) << ',' << format_double(r.chi) << ','
                      << format_double(r.kappa_measured) << ',' << format_double(r.kappa_reconstructed) << ','
                      << format_double(r.impact0) << '\n';
                }
            });
            res["kappa_chi"] = to_json(*kappa);
        });
    }

    if (cfg.wants("null") && cfg.replicates > 0) {
        stage("null", [&] {
            const auto report = null_band(tape, cfg.replicates, *cfg.seed, impact_exponent_estimator(binning));
            for (const auto& w : report.warnings) s.warn("null band: " + w);
            if (report.n_evaluated > 0) exceed = report.exceedance_pooled;
            write_json(s.dir() / "null_band.json", to_json(report));
            s.product("null_band.json");
            res["null_band"] = json{{"exceedance_pooled", number(report.exceedance_pooled)},
                                    {"exceedance_firm", number(report.exceedance_firm)},
                                    {"n_evaluated", report.n_evaluated},
                                    {"pooled_mean", number(report.pooled_mean)},
                                    {"pooled_std", number(report.pooled_std)},
                                    {"failures", report.failures.size()}};
        });
    }

    if (cfg.wants("factorization")) {
        stage("factorization", [&] {
            std::vector<std::size_t> lags;
            for (const auto l : cfg.factorization_lags) {
                if (l < tape.size()) lags.push_back(l);
            }
            if (lags.empty()) {
                s.warn("factorization check skipped: no lag fits inside the tape");
                return;
            }
            const auto fc = factorization_check(tape, lags, Binning{cfg.bins, cfg.min_bin_count, false});
            write_json(s.dir() / "factorization.json", to_json(fc));
            s.product("factorization.json");
            res["factorization"] = json{{"summary_max_abs_log_ratio", number(fc.summary)},
                                        {"excluded_cells", fc.excluded_cells}};
        });
    }

    res["headline"] = json{{"alpha_market", alpha_m ? number(*alpha_m) : json(nullptr)},
                           {"alpha_bar", alpha_bar ? number(*alpha_bar) : json(nullptr)},
                           {"gamma_correlation", gamma_c ? number(*gamma_c) : json(nullptr)},
                           {"gamma_volume", gamma_v ? number(*gamma_v) : json(nullptr)},
                           {"beta", beta ? number(*beta) : json(nullptr)},
                           {"beta_critical", beta_c ? number(*beta_c) : json(nullptr)},
                           {"exceedance_fraction", exceed ? number(*exceed) : json(nullptr)}};
    s.write("summary.txt", [&](std::ostream& o) {
        o << "tape " << tape.label() << ": " << tape.size() << " trades, " << tape.firms().size() << " firms, "
          << tape.eligible_firms().size() << " above the activity floor\n";
        o << "alpha_M            " << fmt(alpha_m) << '\n';
        o << "alpha_bar          " << fmt(alpha_bar) << '\n';
        o << "gamma (signs)      " << fmt(gamma_c) << '\n';
        o << "gamma (volumes)    " << fmt(gamma_v) << '\n';
        o << "beta               " << fmt(beta) << '\n';
        o << "beta_c             " << fmt(beta_c) << '\n';
        o << "exceedance         " << fmt(exceed) << '\n';
        o << "kappa vs chi       measured " << trend(kappa ? kappa->slope_measured : std::nullopt)
          << ", reconstructed " << trend(kappa ? kappa->slope_reconstructed : std::nullopt) << '\n';
        o << "impact0 vs chi     " << trend(kappa ? kappa->slope_impact : std::nullopt) << '\n';
        for (const auto& w : s.warnings()) o << "warning: " << w << '\n';
    });
}

template <class T>
void optional_option(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
    app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Price impact, response and propagator analysis of trade tapes", "firmimpact"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Parse, merge and filter a raw tape into the processed format");
    c_ingest->add_option("--input", ingest.input, "Raw (or processed) tape file")->required();
    c_ingest->add_option("--config", ingest.config, "key=value tape configuration");
    c_ingest->add_option("--out", ingest.out, "Output directory")->required();
    c_ingest->add_option("--format", ingest.format, "raw or processed");
    optional_option(c_ingest, "--quote-mode", ingest.quote_mode, "price or logmid");
    optional_option(c_ingest, "--activity-floor", ingest.activity_floor, "Minimum trades for per-firm estimation");
    optional_option(c_ingest, "--mismatch-threshold", ingest.mismatch_threshold, "Warn above this dropped fraction");
    optional_option(c_ingest, "--mean-spread", ingest.mean_spread, "Mean log spread override");
    optional_option(c_ingest, "--label", ingest.label, "Tape label");
    c_ingest->add_flag("--compare-raw", ingest.compare_raw, "Also fit the impact exponent on unmerged records");

    StudyArgs study;
    auto* c_study = app.add_subcommand("study", "Run the full estimation pipeline on a processed tape");
    c_study->add_option("--tape", study.tape, "Processed tape file")->required();
    c_study->add_option("--config", study.config, "key=value study configuration");
    c_study->add_option("--out", study.out, "Output directory")->required();
    optional_option(c_study, "--seed", study.seed, "Seed for the shuffling null model");
    optional_option(c_study, "--activity-floor", study.activity_floor, "Minimum trades for per-firm estimation");
    optional_option(c_study, "--bins", study.bins, "Volume bins");
    optional_option(c_study, "--min-bin-count", study.min_bin_count, "Minimum trades per reported bin");
    optional_option(c_study, "--lag", study.lag, "Lag horizon L");
    optional_option(c_study, "--lmax", study.lmax, "Kernel length L_max");
    optional_option(c_study, "--horizon", study.horizon, "Tail horizon H (0: 4 L_max)");
    optional_option(c_study, "--ridge", study.ridge, "Ridge penalty");
    optional_option(c_study, "--convention", study.convention, "as_printed or post_trade");
    optional_option(c_study, "--replicates", study.replicates, "Shuffle replicates");
    optional_option(c_study, "--stages", study.stages, "Comma-separated stages");
    optional_option(c_study, "--v0", study.v0, "Constraint anchor volume");
    optional_option(c_study, "--delta0", study.delta0, "Constraint anchor impact");

    SimulateArgs simulate;
    auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic tape from a manifest");
    c_sim->add_option("--manifest", simulate.manifest, "Manifest JSON")->required();
    c_sim->add_option("--out", simulate.out, "Output directory")->required();
    optional_option(c_sim, "--seed", simulate.seed, "Generator seed (required)");
    c_sim->add_flag("--raw", simulate.raw, "Also write the unmerged raw tape");

    ShuffleArgs shuffle;
    auto* c_shuf = app.add_subcommand("shuffle", "Permute trigger ids and optionally compute the null band");
    c_shuf->add_option("--tape", shuffle.tape, "Processed tape file")->required();
    c_shuf->add_option("--out", shuffle.out, "Output directory")->required();
    optional_option(c_shuf, "--seed", shuffle.seed, "Permutation seed (required)");
    c_shuf->add_option("--replicates", shuffle.replicates, "Null-band replicates (0: only write the shuffled tape)");
    optional_option(c_shuf, "--activity-floor", shuffle.activity_floor, "Minimum trades for per-firm estimation");
    c_shuf->add_option("--bins", shuffle.bins, "Volume bins");
    c_shuf->add_option("--min-bin-count", shuffle.min_bin_count, "Minimum trades per reported bin");

    InvertArgs invert;
    auto* c_inv = app.add_subcommand("invert", "Recover the propagator kernel from response and sign correlation");
    c_inv->add_option("--tape", invert.tape, "Processed tape (measures both series)");
    c_inv->add_option("--response", invert.response, "Response CSV");
    c_inv->add_option("--correlation", invert.correlation, "Sign-correlation CSV");
    c_inv->add_option("--out", invert.out, "Output directory")->required();
    c_inv->add_option("--lmax", invert.lmax, "Kernel length L_max");
    c_inv->add_option("--horizon", invert.horizon, "Tail horizon H (0: 4 L_max)");
    c_inv->add_option("--ridge", invert.ridge, "Ridge penalty");
    c_inv->add_option("--convention", invert.convention, "as_printed or post_trade");
    c_inv->add_option("--fit-window", invert.fit_window, "Kernel form fit window")->expected(2);
    optional_option(c_inv, "--r0", invert.r0, "Mean instantaneous impact override");

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "Fit a power law, kernel form or volume law");
    c_fit->add_option("--input", fit.input, "Input file")->required();
    c_fit->add_option("--kind", fit.kind, "impact, series, kernel or volume")->required();
    c_fit->add_option("--out", fit.out, "Output directory")->required();
    c_fit->add_option("--window", fit.window, "Fit window lo hi")->expected(2);
    optional_option(c_fit, "--firm", fit.firm, "Firm id for the volume fit");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return success;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return success;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return usage_error;
    }

    std::string name;
    std::string out_dir;
    if (c_ingest->parsed()) name = "ingest", out_dir = ingest.out;
    else if (c_study->parsed()) name = "study", out_dir = study.out;
    else if (c_sim->parsed()) name = "simulate", out_dir = simulate.out;
    else if (c_shuf->parsed()) name = "shuffle", out_dir = shuffle.out;
    else if (c_inv->parsed()) name = "invert", out_dir = invert.out;
    else name = "fit", out_dir = fit.out;

    Session session(name, out_dir);
    int code = success;
    std::optional<StageFailure> failure;
    try {
        if ((name == "simulate" && !simulate.seed) || (name == "shuffle" && !shuffle.seed)) {
            throw ConfigError(name + " is randomized: --seed is required");
        }
        ensure_dir(session.dir());
        if (name == "ingest") cmd_ingest(ingest, session);
        else if (name == "study") cmd_study(study, session);
        else if (name == "simulate") cmd_simulate(simulate, session);
        else if (name == "shuffle") cmd_shuffle(shuffle, session);
        else if (name == "invert") cmd_invert(invert, session);
        else cmd_fit(fit, session);
    } catch (const StageFailure& f) {
        failure = f;
        code = f.code;
    } catch (const Error& e) {
        failure = StageFailure{"setup", e.what(), code_for(e)};
        code = failure->code;
    } catch (const std::exception& e) {
        failure = StageFailure{"internal", e.what(), data_error};
        code = data_error;
    }
    if (failure) err << "firmimpact " << name << ": stage '" << failure->stage << "' failed: " << failure->message << '\n';
    for (const auto& w : session.warnings()) err << "warning: " << w << '\n';
    session.finish(code, failure);
    if (code == success) out << "firmimpact " << name << ": wrote " << (fs::path(out_dir) / "summary.json").string() << '\n';
    return code;
}

}  // namespace impact::cli
