#include "impact/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "impact/error.hpp"
#include "impact/fit.hpp"
#include "impact/format.hpp"

namespace impact {

using nlohmann::json;

double KernelSpec::at(std::size_t l) const {
    if (l == 0) return 1.0;
    return form()(static_cast<double>(std::min(l, horizon)));
}

namespace {

void check_kernel(const KernelSpec& k, const std::string& where) {
    if (!(k.gamma0 > 0.0) || !std::isfinite(k.gamma0)) throw ConfigError(where + ": gamma0 must be positive");
    if (!(k.l0 >= 0.0) || !std::isfinite(k.l0)) throw ConfigError(where + ": l0 must be non-negative");
    if (!std::isfinite(k.beta)) throw ConfigError(where + ": beta must be finite");
    if (k.horizon < 1) throw ConfigError(where + ": horizon must be at least 1");
}

void check_tail(double psi, const std::string& where) {
    if (!(psi > 1.0 && psi < 2.0)) {
        throw ConfigError(where + ": metaorder tail exponent " + format_double(psi) +
                          " lies outside (1, 2), which does not give 0 < gamma < 1");
    }
}

}  // namespace

void SyntheticManifest::validate() const {
    if (n_trades == 0) throw ConfigError("n_trades must be positive: an empty tape is not allowed");
    if (firms.empty()) throw ConfigError("manifest lists no firms");
    if (!(mean_spread > 0.0)) throw ConfigError("mean_spread must be positive");
    if (!(reference_price > 0.0)) throw ConfigError("reference_price must be positive");
    if (!(tick_size >= 0.0)) throw ConfigError("tick_size must be non-negative");
    if (!(volume_gamma > 2.0) || !std::isfinite(volume_gamma)) throw ConfigError("volume_gamma must exceed 2");
    if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be non-negative");
    if (!(impact_noise >= 0.0)) throw ConfigError("impact_noise must be non-negative");
    if (!(mismatch_rate >= 0.0 && mismatch_rate < 1.0)) throw ConfigError("mismatch_rate must lie in [0, 1)");
    if (!(split_probability >= 0.0 && split_probability <= 1.0)) {
        throw ConfigError("split_probability must lie in [0, 1]");
    }
    if (target_gamma && !(*target_gamma > 0.0 && *target_gamma < 1.0)) {
        throw ConfigError("target_gamma must lie in (0, 1)");
    }
    if (constraint && (!(constraint->v0 > 0.0) || !(constraint->delta0 > 0.0))) {
        throw ConfigError("constraint v0 and delta0 must be positive");
    }
    check_kernel(kernel, "kernel");
    std::set<std::int64_t> ids;
    double total = 0.0;
    for (const auto& f : firms) {
        const std::string where = "firm " + std::to_string(f.id);
        if (!ids.insert(f.id).second) throw ConfigError(where + " is listed twice");
        if (!(f.weight > 0.0)) throw ConfigError(where + ": weight must be positive");
        total += f.weight;
        if (!std::isfinite(f.alpha)) throw ConfigError(where + ": alpha must be finite");
        if (!(f.mean_volume > 0.0)) throw ConfigError(where + ": mean_volume must be positive");
        if (f.c && !(*f.c > 0.0)) throw ConfigError(where + ": c must be positive");
        if (!f.c && !constraint) throw ConfigError(where + ": needs c or a manifest-level constraint");
        if (const auto* psi = std::get_if<double>(&f.tail)) check_tail(*psi, where);
        if (std::holds_alternative<TailCalibrated>(f.tail) && !target_gamma) {
            throw ConfigError(where + ": calibrated tail needs target_gamma");
        }
        if (f.kernel) check_kernel(*f.kernel, where + " kernel");
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("firm weights must sum to 1, got " + format_double(total));
}

double SyntheticManifest::impact_coefficient(const FirmSpec& firm) const {
    if (firm.c) return *firm.c;
    if (!constraint) throw ConfigError("firm " + std::to_string(firm.id) + " has no impact coefficient");
    return constraint_coefficient(firm.alpha, constraint->v0, constraint->delta0);
}

namespace {

template <class T>
T take(const json& j, const char* key, T fallback) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("manifest field '") + key + "' has the wrong type");
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ConfigError(where + ": unknown field '" + key + "'");
        }
    }
}

KernelSpec kernel_from_json(const json& j, const KernelSpec& defaults, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    reject_unknown(j, {"gamma0", "l0", "beta", "horizon"}, where);
    KernelSpec k;
    k.gamma0 = take(j, "gamma0", defaults.gamma0);
    k.l0 = take(j, "l0", defaults.l0);
    k.beta = take(j, "beta", defaults.beta);
    k.horizon = take<std::size_t>(j, "horizon", defaults.horizon);
    return k;
}

json kernel_to_json(const KernelSpec& k) {
    return json{{"gamma0", k.gamma0}, {"l0", k.l0}, {"beta", k.beta}, {"horizon", k.horizon}};
}

}  // namespace

SyntheticManifest manifest_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
    reject_unknown(j,
                   {"n_trades", "seed", "label", "mean_spread", "reference_price", "tick_size", "volume_gamma",
                    "noise_scale", "impact_noise", "mismatch_rate", "split_probability", "activity_floor",
                    "target_gamma", "constraint", "kernel", "firms", "realized"},
                   "manifest");
    SyntheticManifest m;
    m.n_trades = take<std::size_t>(j, "n_trades", 0);
    m.seed = take<std::uint64_t>(j, "seed", 0);
    m.label = take<std::string>(j, "label", m.label);
    m.mean_spread = take(j, "mean_spread", m.mean_spread);
    m.reference_price = take(j, "reference_price", m.reference_price);
    m.tick_size = take(j, "tick_size", m.tick_size);
    m.volume_gamma = take(j, "volume_gamma", m.volume_gamma);
    m.noise_scale = take(j, "noise_scale", m.noise_scale);
    m.impact_noise = take(j, "impact_noise", m.impact_noise);
    m.mismatch_rate = take(j, "mismatch_rate", m.mismatch_rate);
    m.split_probability = take(j, "split_probability", m.split_probability);
    m.activity_floor = take<std::size_t>(j, "activity_floor", m.activity_floor);
    if (j.contains("target_gamma") && !j["target_gamma"].is_null()) m.target_gamma = take(j, "target_gamma", 0.0);
    if (j.contains("constraint")) {
        const auto& c = j["constraint"];
        reject_unknown(c, {"v0", "delta0"}, "constraint");
        m.constraint = ConstraintSpec{take(c, "v0", 60000.0), take(c, "delta0", 40.0)};
    }
    if (j.contains("kernel")) m.kernel = kernel_from_json(j["kernel"], m.kernel, "kernel");
    if (!j.contains("firms") || !j["firms"].is_array()) throw ConfigError("manifest needs a 'firms' array");
    for (const auto& f : j["firms"]) {
        if (!f.is_object()) throw ConfigError("each firm must be an object");
        reject_unknown(f, {"id", "weight", "alpha", "c", "mean_volume", "tail_exponent", "kernel"}, "firm");
        FirmSpec s;
        if (!f.contains("id")) throw ConfigError("every firm needs an 'id'");
        s.id = take<std::int64_t>(f, "id", 0);
        s.weight = take(f, "weight", 0.0);
        s.alpha = take(f, "alpha", s.alpha);
        if (f.contains("c") && !f["c"].is_null()) s.c = take(f, "c", 0.0);
        s.mean_volume = take(f, "mean_volume", s.mean_volume);
        s.tail = TailMemoryless{};
        if (f.contains("tail_exponent")) {
            const auto& t = f["tail_exponent"];
            if (t.is_number()) s.tail = t.get<double>();
            else if (t == "memoryless") s.tail = TailMemoryless{};
            else if (t == "calibrated") s.tail = TailCalibrated{};
            else throw ConfigError("tail_exponent must be a number, \"memoryless\" or \"calibrated\"");
        }
        if (f.contains("kernel")) s.kernel = kernel_from_json(f["kernel"], m.kernel, "firm kernel");
        m.firms.push_back(s);
    }
    return m;
}

json to_json(const SyntheticManifest& m) {
    json firms = json::array();
    for (const auto& f : m.firms) {
        json jf{{"id", f.id}, {"weight", f.weight}, {"alpha", f.alpha}, {"mean_volume", f.mean_volume}};
        if (f.c) jf["c"] = *f.c;
        if (std::holds_alternative<TailMemoryless>(f.tail)) jf["tail_exponent"] = "memoryless";
        else if (std::holds_alternative<TailCalibrated>(f.tail)) jf["tail_exponent"] = "calibrated";
        else jf["tail_exponent"] = std::get<double>(f.tail);
        if (f.kernel) jf["kernel"] = kernel_to_json(*f.kernel);
        firms.push_back(jf);
    }
    json j{{"n_trades", m.n_trades},
           {"seed", m.seed},
           {"label", m.label},
           {"mean_spread", m.mean_spread},
           {"reference_price", m.reference_price},
           {"tick_size", m.tick_size},
           {"volume_gamma", m.volume_gamma},
           {"noise_scale", m.noise_scale},
           {"impact_noise", m.impact_noise},
           {"mismatch_rate", m.mismatch_rate},
           {"split_probability", m.split_probability},
           {"activity_floor", m.activity_floor},
           {"kernel", kernel_to_json(m.kernel)},
           {"firms", firms}};
    if (m.target_gamma) j["target_gamma"] = *m.target_gamma;
    if (m.constraint) j["constraint"] = json{{"v0", m.constraint->v0}, {"delta0", m.constraint->delta0}};
    return j;
}

SyntheticManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return manifest_from_json(j);
}

double sample_volume_law(Rng& rng, double gamma) {
    return VolumeLaw{gamma}.quantile(rng.uniform_pos());
}

namespace {

std::uint64_t grid_length(std::uint64_t k, std::uint64_t m, double psi) {
    const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(m);
    return static_cast<std::uint64_t>(std::floor(std::pow(u, -1.0 / psi)));
}

std::uint64_t grid_total(std::uint64_t m, double psi) {
    std::uint64_t s = 0;
    for (std::uint64_t k = 0; k < m; ++k) s += grid_length(k, m, psi);
    return s;
}

// Probability that two positions k apart in the concatenated runs share a run.
std::vector<double> same_run_probability(const std::vector<std::uint64_t>& lengths, std::size_t max_k) {
    std::vector<double> count(max_k + 2, 0.0);
    double big_count = 0.0;
    double big_sum = 0.0;
    double total = 0.0;
    for (const auto len : lengths) {
        total += static_cast<double>(len);
        if (len <= max_k + 1) count[len] += 1.0;
        else {
            big_count += 1.0;
            big_sum += static_cast<double>(len);
        }
    }
    std::vector<double> p(max_k + 1, 0.0);
    // Walk k downwards keeping #{L > k} and the sum of those L.
    double above = big_count;
    double above_sum = big_sum;
    for (std::size_t k = max_k + 1; k-- > 0;) {
        above += count[k + 1];
        above_sum += count[k + 1] * static_cast<double>(k + 1);
        p[k] = (above_sum - static_cast<double>(k) * above) / total;
    }
    return p;
}

}  // namespace

std::vector<std::uint64_t> metaorder_lengths(std::size_t n, double psi) {
    check_tail(psi, "metaorder lengths");
    if (n == 0) return {};
    std::uint64_t lo = 1;
    std::uint64_t hi = n;
    while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (grid_total(mid, psi) >= n) hi = mid;
        else lo = mid + 1;
    }
    std::vector<std::uint64_t> out(lo);
    for (std::uint64_t k = 0; k < lo; ++k) out[k] = grid_length(k, lo, psi);
    return out;
}

std::vector<double> expected_sign_correlation(std::size_t n_trades, const std::vector<double>& weights,
                                              const std::vector<double>& psi, std::size_t max_lag) {
    if (weights.size() != psi.size()) throw ConfigError("weights and tail exponents differ in length");
    std::vector<double> c(max_lag + 1, 0.0);
    c[0] = 1.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (psi[i] == 0.0) continue;
        const double w = weights[i];
        const auto n = static_cast<std::size_t>(std::max(1.0, std::round(w * static_cast<double>(n_trades))));
        const auto own = same_run_probability(metaorder_lengths(n, psi[i]), max_lag);
        // d[j]: probability that j of the l-1 intermediate trades belong to the firm.
        std::vector<double> d(max_lag + 1, 0.0);
        d[0] = 1.0;
        for (std::size_t l = 1; l <= max_lag; ++l) {
            if (l > 1) {
                for (std::size_t j = l - 1; j > 0; --j) d[j] = (1.0 - w) * d[j] + w * d[j - 1];
                d[0] *= (1.0 - w);
            }
            double e = 0.0;
            for (std::size_t j = 0; j < l; ++j) e += d[j] * own[std::min(j + 1, max_lag)];
            c[l] += w * w * e;
        }
    }
    return c;
}

double calibrate_tail(const SyntheticManifest& m) {
    if (!m.target_gamma) throw ConfigError("tail calibration needs target_gamma");
    const std::size_t max_lag = std::min<std::size_t>(1000, m.n_trades > 20 ? m.n_trades / 2 : 10);
    if (max_lag < 20) throw ConfigError("tape too short to calibrate the metaorder tail");
    std::vector<double> weights;
    for (const auto& f : m.firms) weights.push_back(f.weight);

    auto exponent = [&](double shared) {
        std::vector<double> psi;
        for (const auto& f : m.firms) {
            if (std::holds_alternative<TailCalibrated>(f.tail)) psi.push_back(shared);
            else if (const auto* p = std::get_if<double>(&f.tail)) psi.push_back(*p);
            else psi.push_back(0.0);
        }
        const auto c = expected_sign_correlation(m.n_trades, weights, psi, max_lag);
        std::vector<double> x, w;
        for (std::size_t l = 0; l <= max_lag; ++l) {
            x.push_back(static_cast<double>(l));
            w.push_back(static_cast<double>(m.n_trades - l));
        }
        return -fit_power_law(x, c, w, FitWindow{10.0, static_cast<double>(max_lag)}).exponent;
    };

    double lo = 1.01;
    double hi = 1.99;
    const double target = *m.target_gamma;
    const double g_lo = exponent(lo);
    const double g_hi = exponent(hi);
    if (!(target >= g_lo && target <= g_hi)) {
        throw ConfigError("target_gamma " + format_double(target) + " is outside the reachable range [" +
                          format_double(g_lo) + ", " + format_double(g_hi) + "] for this firm mix");
    }
    for (int it = 0; it < 40 && hi - lo > 1e-6; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (exponent(mid) < target) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

SignFlow generate_signs(const SyntheticManifest& m, std::size_t total) {
    SignFlow flow;
    flow.firm.resize(total);
    flow.sign.resize(total);
    const std::size_t nf = m.firms.size();

    std::vector<double> cumulative(nf);
    double acc = 0.0;
    for (std::size_t i = 0; i < nf; ++i) {
        acc += m.firms[i].weight;
        cumulative[i] = acc;
    }
    Rng pick(derive_seed(m.seed, 1));
    std::vector<std::vector<std::size_t>> slots(nf);
    for (std::size_t t = 0; t < total; ++t) {
        const double u = pick.uniform() * acc;
        const auto i = std::min<std::size_t>(
            static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin()),
            nf - 1);
        flow.firm[t] = static_cast<std::uint32_t>(i);
        slots[i].push_back(t);
    }

    const bool any_calibrated = std::any_of(m.firms.begin(), m.firms.end(), [](const FirmSpec& f) {
        return std::holds_alternative<TailCalibrated>(f.tail);
    });
    const double shared = any_calibrated ? calibrate_tail(m) : 0.0;

    flow.psi.assign(nf, 0.0);
    for (std::size_t i = 0; i < nf; ++i) {
        const auto& f = m.firms[i];
        if (std::holds_alternative<TailCalibrated>(f.tail)) flow.psi[i] = shared;
        else if (const auto* p = std::get_if<double>(&f.tail)) flow.psi[i] = *p;

        Rng rng(derive_seed(m.seed, 1000 + i));
        const auto& ticks = slots[i];
        if (flow.psi[i] == 0.0) {
            for (const auto t : ticks) flow.sign[t] = rng.coin() ? 1 : -1;
            continue;
        }
        auto lengths = metaorder_lengths(ticks.size(), flow.psi[i]);
        for (std::size_t k = lengths.size(); k > 1; --k) std::swap(lengths[k - 1], lengths[rng.below(k)]);
        std::vector<int> run_sign(lengths.size());
        for (auto& s : run_sign) s = rng.coin() ? 1 : -1;
        const std::uint64_t stream = std::accumulate(lengths.begin(), lengths.end(), std::uint64_t{0});
        std::uint64_t skip = stream > ticks.size() ? rng.below(stream - ticks.size() + 1) : 0;

        std::size_t run = 0;
        std::uint64_t left = lengths.empty() ? 0 : lengths[0];
        while (skip > 0) {
            const std::uint64_t step = std::min(skip, left);
            skip -= step;
            left -= step;
            if (left == 0) left = lengths[++run];
        }
        for (const auto t : ticks) {
            flow.sign[t] = run_sign[run];
            if (--left == 0 && run + 1 < lengths.size()) left = lengths[++run];
        }
    }
    return flow;
}

namespace {

constexpr std::int64_t session_start = 34200;

struct KernelTable {
    std::vector<double> g;  // g[l] for l = 0..horizon
    std::size_t horizon = 0;
};

}  // namespace

SyntheticTape generate(const SyntheticManifest& m) {
    m.validate();
    const std::size_t nf = m.firms.size();

    std::vector<KernelTable> kernels;
    std::vector<std::size_t> kernel_of(nf, 0);
    auto table = [](const KernelSpec& spec) {
        KernelTable t;
        t.horizon = spec.horizon;
        t.g.resize(spec.horizon + 1);
        for (std::size_t l = 0; l <= spec.horizon; ++l) t.g[l] = spec.at(l);
        return t;
    };
    kernels.push_back(table(m.kernel));
    for (std::size_t i = 0; i < nf; ++i) {
        if (m.firms[i].kernel) {
            kernel_of[i] = kernels.size();
            kernels.push_back(table(*m.firms[i].kernel));
        }
    }
    std::size_t burn_in = 0;
    for (const auto& k : kernels) burn_in = std::max(burn_in, k.horizon);
    const std::size_t total = m.n_trades + burn_in;

    const SignFlow flow = generate_signs(m, total);

    std::vector<double> coefficient(nf);
    for (std::size_t i = 0; i < nf; ++i) coefficient[i] = m.impact_coefficient(m.firms[i]);

    Rng volume_rng(derive_seed(m.seed, 2));
    Rng noise_rng(derive_seed(m.seed, 3));
    Rng split_rng(derive_seed(m.seed, 4));
    Rng mismatch_rng(derive_seed(m.seed, 5));
    Rng impact_rng(derive_seed(m.seed, 6));
    Rng counterparty_rng(derive_seed(m.seed, 7));

    std::vector<std::vector<double>> moves(kernels.size(), std::vector<double>(total, 0.0));
    std::vector<double> older(kernels.size(), 0.0);
    const double base = std::log(m.reference_price);
    const double sigma = m.sigma();
    const double half_spread = m.mean_spread / 2.0;
    const double s2 = m.impact_noise * m.impact_noise;
    double noise = 0.0;

    ParsedRecords parsed;
    parsed.has_after_quotes = true;
    parsed.records.reserve(static_cast<std::size_t>(static_cast<double>(m.n_trades) * (1.0 + m.split_probability)));
    std::vector<std::int64_t> fragments;

    for (std::size_t t = 0; t < total; ++t) {
        double q_before = base + noise;
        for (std::size_t k = 0; k < kernels.size(); ++k) {
            const auto& kt = kernels[k];
            const auto& x = moves[k];
            if (t >= kt.horizon + 1) older[k] += x[t - kt.horizon - 1];
            const std::size_t reach = std::min(kt.horizon, t);
            const double* g = kt.g.data();
            const double* past = x.data() + t;
            double s = 0.0;
            for (std::size_t l = 1; l <= reach; ++l) s += g[l] * past[-static_cast<std::ptrdiff_t>(l)];
            q_before += s + g[kt.horizon] * older[k];
        }

        double price = std::exp(q_before);
        if (m.tick_size > 0.0) price = std::max(m.tick_size, std::round(price / m.tick_size) * m.tick_size);

        const std::size_t i = flow.firm[t];
        const FirmSpec& firm = m.firms[i];
        const int eps = flow.sign[t];
        const double target = firm.mean_volume * sample_volume_law(volume_rng, m.volume_gamma);
        const auto shares = std::max<std::int64_t>(1, std::llround(target / price));

        fragments.assign(1, shares);
        if (m.split_probability > 0.0 && split_rng.uniform() < m.split_probability && shares >= 2) {
            const std::int64_t pieces = shares >= 3 ? 2 + static_cast<std::int64_t>(split_rng.below(2)) : 2;
            fragments.assign(static_cast<std::size_t>(pieces), shares / pieces);
            fragments.back() += shares % pieces;
        }
        double volume = 0.0;
        for (const auto sh : fragments) volume += static_cast<double>(sh) * price;

        double impact = sigma * coefficient[i] * std::pow(volume, firm.alpha);
        if (m.impact_noise > 0.0) impact *= std::exp(m.impact_noise * impact_rng.normal() - 0.5 * s2);
        double move = eps * impact;
        if (m.mismatch_rate > 0.0 && mismatch_rng.uniform() < m.mismatch_rate) move = -move;
        moves[kernel_of[i]][t] = move;
        const double q_after = q_before + move;
        if (m.noise_scale > 0.0) noise += m.noise_scale * sigma * noise_rng.normal();

        const auto other = m.firms[static_cast<std::size_t>(counterparty_rng.below(nf))].id;
        if (t < burn_in) continue;
        for (std::size_t f = 0; f < fragments.size(); ++f) {
            TradeRecord r;
            r.second = session_start + static_cast<std::int64_t>(t - burn_in);
            r.buyer_id = firm_id(eps > 0 ? firm.id : other);
            r.seller_id = firm_id(eps > 0 ? other : firm.id);
            r.sign = eps;
            r.shares = fragments[f];
            r.price = price;
            r.bid_quote = q_before - half_spread;
            r.ask_quote = q_before + half_spread;
            const double q = f + 1 == fragments.size() ? q_after : q_before;
            r.bid_after = q - half_spread;
            r.ask_after = q + half_spread;
            parsed.records.push_back(r);
        }
    }

    TapeConfig config;
    config.quote_mode = QuoteMode::logmid;
    config.activity_floor = m.activity_floor;
    config.label = m.label;
    std::vector<TradeRecord> records = parsed.records;
    Ingested ingested = ingest_records(std::move(parsed), config);
    return SyntheticTape{std::move(records), std::move(ingested.tape), std::move(ingested.report), flow.psi, burn_in};
}

void write_raw(std::ostream& out, const std::vector<TradeRecord>& records) {
    out << "second,buyer_id,seller_id,sign,shares,price,bid_quote,ask_quote,bid_after,ask_after\n";
    std::string line;
    for (const auto& r : records) {
        line.clear();
        line += std::to_string(r.second);
        line += ',';
        line += std::to_string(to_int(r.buyer_id));
        line += ',';
        line += std::to_string(to_int(r.seller_id));
        line += ',';
        line += r.sign > 0 ? "1" : "-1";
        line += ',';
        line += std::to_string(r.shares);
        line += ',';
        line += format_double(r.price);
        line += ',';
        line += format_double(r.bid_quote);
        line += ',';
        line += format_double(r.ask_quote);
        line += ',';
        line += format_double(r.bid_after.value_or(r.bid_quote));
        line += ',';
        line += format_double(r.ask_after.value_or(r.ask_quote));
        line += '\n';
        out << line;
    }
}

EmitPaths emit_tape(const SyntheticManifest& m, const std::filesystem::path& dir, bool emit_raw) {
    const SyntheticTape synth = generate(m);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

    EmitPaths paths{dir / "tape.csv", dir / "manifest.json", std::nullopt};
    auto open = [](const std::filesystem::path& p) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw IoError("cannot write " + p.string());
        return out;
    };
    {
        auto out = open(paths.tape);
        write_processed(out, synth.tape);
        if (!out) throw IoError("failed writing " + paths.tape.string());
    }
    {
        json j = to_json(m);
        json psi = json::array();
        for (const double p : synth.psi) psi.push_back(p);
        j["realized"] = json{{"tail_exponents", psi},
                             {"burn_in", synth.burn_in},
                             {"tape_trades", synth.tape.size()},
                             {"raw_records", synth.records.size()},
                             {"dropped_fraction", synth.report.dropped_fraction},
                             {"mean_spread", synth.tape.mean_spread()},
                             {"rng", std::string(Rng::algorithm)}};
        auto out = open(paths.manifest);
        out << j.dump(2) << '\n';
        if (!out) throw IoError("failed writing " + paths.manifest.string());
    }
    if (emit_raw) {
        paths.raw = dir / "raw.csv";
        auto out = open(*paths.raw);
        write_raw(out, synth.records);
        if (!out) throw IoError("failed writing " + paths.raw->string());
    }
    return paths;
}

}  // namespace impact
