#include "impact/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "impact/error.hpp"

namespace impact {

QuoteMode parse_quote_mode(std::string_view text) {
    if (text == "price") return QuoteMode::price;
    if (text == "logmid") return QuoteMode::logmid;
    throw ConfigError("quote_mode must be 'price' or 'logmid', got '" + std::string(text) + "'");
}

std::string_view to_string(QuoteMode mode) {
    return mode == QuoteMode::price ? "price" : "logmid";
}

namespace {

enum Column : std::size_t {
    col_second, col_buyer, col_seller, col_sign, col_shares, col_price, col_bid, col_ask,
    col_bid_after, col_ask_after, col_count
};

constexpr std::array<std::string_view, col_count> column_names = {
    "second", "buyer_id", "seller_id", "sign", "shares", "price",
    "bid_quote", "ask_quote", "bid_after", "ask_after"};

constexpr std::size_t required_columns = col_bid_after;

}  // namespace

ParsedRecords parse_raw(std::istream& in, const RawSchema& schema) {
    ParsedRecords out;
    std::string line;
    std::size_t lineno = 0;

    std::array<std::size_t, col_count> position{};
    position.fill(static_cast<std::size_t>(-1));
    bool have_header = false;
    std::size_t n_fields = 0;

    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        if (!have_header) {
            const auto names = split(view, schema.delimiter);
            n_fields = names.size();
            for (std::size_t i = 0; i < names.size(); ++i) {
                const auto it = std::find(column_names.begin(), column_names.end(), names[i]);
                if (it != column_names.end()) position[static_cast<std::size_t>(it - column_names.begin())] = i;
            }
            for (std::size_t c = 0; c < required_columns; ++c) {
                if (position[c] == static_cast<std::size_t>(-1)) {
                    throw DataError("raw tape header is missing column '" + std::string(column_names[c]) + "'");
                }
            }
            const bool bid_after = position[col_bid_after] != static_cast<std::size_t>(-1);
            const bool ask_after = position[col_ask_after] != static_cast<std::size_t>(-1);
            if (bid_after != ask_after) throw DataError("raw tape header must carry both bid_after and ask_after or neither");
            out.has_after_quotes = bid_after;
            have_header = true;
            continue;
        }

        const auto fields = split(view, schema.delimiter);
        auto fail = [&](std::string message) {
            out.errors.push_back({lineno, std::move(message)});
            if (out.errors.size() > schema.max_row_errors) {
                throw DataError("raw tape: more than " + std::to_string(schema.max_row_errors) +
                                " malformed rows (last at line " + std::to_string(lineno) + ")");
            }
        };
        if (fields.size() != n_fields) {
            fail("expected " + std::to_string(n_fields) + " fields, found " + std::to_string(fields.size()));
            continue;
        }
        auto integer = [&](Column c) { return parse_int(fields[position[c]]); };
        auto real = [&](Column c) { return parse_double(fields[position[c]]); };

        TradeRecord r;
        r.line = lineno;
        const auto second = integer(col_second);
        const auto buyer = integer(col_buyer);
        const auto seller = integer(col_seller);
        const auto sign = integer(col_sign);
        const auto shares = integer(col_shares);
        const auto price = real(col_price);
        const auto bid = real(col_bid);
        const auto ask = real(col_ask);
        std::string bad;
        if (!second) bad = "second";
        else if (!buyer) bad = "buyer_id";
        else if (!seller) bad = "seller_id";
        else if (!sign) bad = "sign";
        else if (!shares) bad = "shares";
        else if (!price) bad = "price";
        else if (!bid) bad = "bid_quote";
        else if (!ask) bad = "ask_quote";
        if (!bad.empty()) {
            fail("unparseable field '" + bad + "'");
            continue;
        }
        if (*sign != 1 && *sign != -1) {
            fail("sign must be +1 or -1");
            continue;
        }
        if (*shares < 1) {
            fail("shares must be at least 1");
            continue;
        }
        if (!(*price > 0.0) || !std::isfinite(*price)) {
            fail("price must be positive");
            continue;
        }
        if (!std::isfinite(*bid) || !std::isfinite(*ask)) {
            fail("quotes must be finite");
            continue;
        }
        if (out.has_after_quotes) {
            const auto ba = real(col_bid_after);
            const auto aa = real(col_ask_after);
            if (!ba || !aa || !std::isfinite(*ba) || !std::isfinite(*aa)) {
                fail("unparseable post-trade quote");
                continue;
            }
            r.bid_after = *ba;
            r.ask_after = *aa;
        }
        r.second = *second;
        r.buyer_id = firm_id(*buyer);
        r.seller_id = firm_id(*seller);
        r.sign = static_cast<int>(*sign);
        r.shares = *shares;
        r.price = *price;
        r.bid_quote = *bid;
        r.ask_quote = *ask;
        out.records.push_back(r);
    }
    return out;
}

double mid_quote(double bid, double ask, QuoteMode mode) {
    if (mode == QuoteMode::logmid) return 0.5 * (bid + ask);
    if (!(bid > 0.0) || !(ask > 0.0)) throw DataError("price-mode quotes must be positive");
    return 0.5 * (std::log(ask) + std::log(bid));
}

namespace {

double after_mid(const std::vector<TradeRecord>& records, std::size_t last, QuoteMode mode) {
    const TradeRecord& r = records[last];
    if (r.bid_after && r.ask_after) return mid_quote(*r.bid_after, *r.ask_after, mode);
    if (last + 1 < records.size()) return mid_quote(records[last + 1].bid_quote, records[last + 1].ask_quote, mode);
    return mid_quote(r.bid_quote, r.ask_quote, mode);
}

}  // namespace

std::vector<Trade> aggregate(const std::vector<TradeRecord>& records, QuoteMode mode) {
    std::vector<Trade> out;
    std::size_t i = 0;
    while (i < records.size()) {
        const TradeRecord& first = records[i];
        const FirmId trigger = first.trigger();
        Trade t;
        t.tick = static_cast<std::int64_t>(out.size());
        t.trigger_id = trigger;
        t.sign = first.sign;
        t.second = first.second;
        t.quote_before = mid_quote(first.bid_quote, first.ask_quote, mode);
        std::size_t j = i;
        while (j < records.size() && records[j].second == first.second && records[j].sign == first.sign &&
               records[j].trigger() == trigger) {
            t.volume += static_cast<double>(records[j].shares) * records[j].price;
            t.shares += records[j].shares;
            ++j;
        }
        t.quote_after = after_mid(records, j - 1, mode);
        out.push_back(t);
        i = j;
    }
    return out;
}

std::vector<Trade> records_as_trades(const std::vector<TradeRecord>& records, QuoteMode mode) {
    std::vector<Trade> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const TradeRecord& r = records[i];
        Trade t;
        t.tick = static_cast<std::int64_t>(i);
        t.trigger_id = r.trigger();
        t.sign = r.sign;
        t.second = r.second;
        t.shares = r.shares;
        t.volume = static_cast<double>(r.shares) * r.price;
        t.quote_before = mid_quote(r.bid_quote, r.ask_quote, mode);
        t.quote_after = after_mid(records, i, mode);
        out.push_back(t);
    }
    return out;
}

double mean_log_spread(const std::vector<TradeRecord>& records, QuoteMode mode) {
    if (records.empty()) throw DataError("cannot compute a mean spread from an empty record set");
    double sum = 0.0;
    for (const auto& r : records) {
        sum += mode == QuoteMode::price ? std::log(r.ask_quote) - std::log(r.bid_quote) : r.ask_quote - r.bid_quote;
    }
    return sum / static_cast<double>(records.size());
}

FilterResult filter_mismatches(std::vector<Trade> trades, double warn_threshold) {
    FilterResult res;
    const std::size_t total = trades.size();
    res.trades.reserve(total);
    for (auto& t : trades) {
        if (t.signed_move() < 0.0) continue;
        t.tick = static_cast<std::int64_t>(res.trades.size());
        res.trades.push_back(t);
    }
    res.dropped = total - res.trades.size();
    res.dropped_fraction = total == 0 ? 0.0 : static_cast<double>(res.dropped) / static_cast<double>(total);
    res.warning = res.dropped_fraction > warn_threshold;
    return res;
}

bool Tape::has_firm(FirmId id) const noexcept {
    return std::binary_search(firms_.begin(), firms_.end(), id);
}

std::span<const std::size_t> Tape::ticks_of(FirmId id) const noexcept {
    const auto it = std::lower_bound(firms_.begin(), firms_.end(), id);
    if (it == firms_.end() || *it != id) return {};
    return firm_ticks_[static_cast<std::size_t>(it - firms_.begin())];
}

double Tape::participation(FirmId id) const noexcept {
    return static_cast<double>(trade_count(id)) / static_cast<double>(size());
}

std::vector<FirmId> Tape::eligible_firms() const {
    std::vector<FirmId> out;
    for (std::size_t k = 0; k < firms_.size(); ++k) {
        if (firm_ticks_[k].size() >= activity_floor_) out.push_back(firms_[k]);
    }
    return out;
}

void Tape::index() {
    const std::size_t n = trades_.size();
    signs_.resize(n);
    before_.resize(n);
    after_.resize(n);
    volume_.resize(n);
    firms_.clear();
    for (std::size_t t = 0; t < n; ++t) {
        const Trade& tr = trades_[t];
        signs_[t] = tr.sign;
        before_[t] = tr.quote_before;
        after_[t] = tr.quote_after;
        volume_[t] = tr.volume;
        firms_.push_back(tr.trigger_id);
    }
    std::sort(firms_.begin(), firms_.end());
    firms_.erase(std::unique(firms_.begin(), firms_.end()), firms_.end());
    firm_ticks_.assign(firms_.size(), {});
    slot_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto k = static_cast<std::size_t>(
            std::lower_bound(firms_.begin(), firms_.end(), trades_[t].trigger_id) - firms_.begin());
        slot_[t] = k;
        firm_ticks_[k].push_back(t);
    }
}

Tape Tape::with_triggers(const std::vector<FirmId>& triggers) const {
    if (triggers.size() != trades_.size()) throw ConfigError("trigger list length differs from tape length");
    Tape copy = *this;
    for (std::size_t t = 0; t < triggers.size(); ++t) copy.trades_[t].trigger_id = triggers[t];
    copy.index();
    return copy;
}

Tape build_tape(std::vector<Trade> trades, std::string label, double mean_spread, std::size_t activity_floor) {
    if (trades.empty()) throw DataError("cannot build a tape from an empty trade list");
    if (!(mean_spread > 0.0) || !std::isfinite(mean_spread)) {
        throw DataError("mean spread must be positive and finite, got " + format_double(mean_spread));
    }
    for (std::size_t t = 0; t < trades.size(); ++t) {
        const Trade& tr = trades[t];
        if (tr.tick != static_cast<std::int64_t>(t)) {
            throw DataError("tick indices must run 0..N-1 without gaps (found " + std::to_string(tr.tick) +
                            " at position " + std::to_string(t) + ")");
        }
        if (tr.sign != 1 && tr.sign != -1) throw DataError("trade sign must be +1 or -1 at tick " + std::to_string(t));
        if (!(tr.volume > 0.0) || !std::isfinite(tr.volume)) {
            throw DataError("trade volume must be positive at tick " + std::to_string(t));
        }
        if (!std::isfinite(tr.quote_before) || !std::isfinite(tr.quote_after)) {
            throw DataError("non-finite quote at tick " + std::to_string(t));
        }
    }
    for (char& c : label) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') c = '_';
    }
    Tape tape;
    tape.trades_ = std::move(trades);
    tape.label_ = label.empty() ? "tape" : std::move(label);
    tape.mean_spread_ = mean_spread;
    tape.activity_floor_ = activity_floor;
    tape.index();
    return tape;
}

void write_processed(std::ostream& out, const Tape& tape) {
    out << "# label=" << tape.label() << " mean_spread=" << format_double(tape.mean_spread()) << '\n';
    out << "tick,trigger_id,sign,volume,quote_before,quote_after\n";
    std::string line;
    for (const Trade& t : tape.trades()) {
        line.clear();
        line += std::to_string(t.tick);
        line += ',';
        line += std::to_string(to_int(t.trigger_id));
        line += ',';
        line += t.sign > 0 ? "1" : "-1";
        line += ',';
        line += format_double(t.volume);
        line += ',';
        line += format_double(t.quote_before);
        line += ',';
        line += format_double(t.quote_after);
        line += '\n';
        out << line;
    }
}

Tape read_processed(std::istream& in, const ProcessedReadOptions& options) {
    std::optional<std::string> label = options.label;
    std::optional<double> spread = options.mean_spread;
    std::vector<Trade> trades;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view = trim(line);
        if (view.empty()) continue;
        if (view.front() == '#') {
            std::istringstream tokens{std::string(view.substr(1))};
            std::string token;
            while (tokens >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = token.substr(0, eq);
                const std::string value = token.substr(eq + 1);
                if (key == "label" && !options.label) label = value;
                if (key == "mean_spread" && !options.mean_spread) {
                    const auto v = parse_double(value);
                    if (!v) throw DataError("processed tape line " + std::to_string(lineno) + ": bad mean_spread");
                    spread = *v;
                }
            }
            continue;
        }
        if (!header) {
            if (view != "tick,trigger_id,sign,volume,quote_before,quote_after") {
                throw DataError("processed tape line " + std::to_string(lineno) + ": unexpected header");
            }
            header = true;
            continue;
        }
        const auto f = split(view, ',');
        const auto where = "processed tape line " + std::to_string(lineno);
        if (f.size() != 6) throw DataError(where + ": expected 6 fields");
        const auto tick = parse_int(f[0]);
        const auto trig = parse_int(f[1]);
        const auto sign = parse_int(f[2]);
        const auto vol = parse_double(f[3]);
        const auto qb = parse_double(f[4]);
        const auto qa = parse_double(f[5]);
        if (!tick || !trig || !sign || !vol || !qb || !qa) throw DataError(where + ": unparseable field");
        Trade t;
        t.tick = *tick;
        t.trigger_id = firm_id(*trig);
        t.sign = static_cast<int>(*sign);
        t.volume = *vol;
        t.quote_before = *qb;
        t.quote_after = *qa;
        trades.push_back(t);
    }
    if (!spread) throw DataError("processed tape carries no mean_spread and none was configured");
    return build_tape(std::move(trades), label.value_or("tape"), *spread, options.activity_floor);
}

TapeConfig TapeConfig::from(const KeyValues& kv) {
    TapeConfig c;
    if (const auto v = kv.text("quote_mode")) c.quote_mode = parse_quote_mode(*v);
    if (const auto v = kv.integer("activity_floor")) {
        if (*v < 0) throw ConfigError("activity_floor must be non-negative");
        c.activity_floor = static_cast<std::size_t>(*v);
    }
    if (const auto v = kv.number("mismatch_threshold")) {
        if (!(*v >= 0.0 && *v <= 1.0)) throw ConfigError("mismatch_threshold must lie in [0, 1]");
        c.mismatch_threshold = *v;
    }
    if (const auto v = kv.number("mean_spread")) {
        if (!(*v > 0.0)) throw ConfigError("mean_spread must be positive");
        c.mean_spread = *v;
    }
    if (const auto v = kv.text("delimiter")) {
        if (*v == "tab" || *v == "\\t") c.delimiter = '\t';
        else if (v->size() == 1) c.delimiter = v->front();
        else throw ConfigError("delimiter must be a single character or 'tab'");
    }
    if (const auto v = kv.integer("max_row_errors")) {
        if (*v < 0) throw ConfigError("max_row_errors must be non-negative");
        c.max_row_errors = static_cast<std::size_t>(*v);
    }
    if (const auto v = kv.text("label")) c.label = *v;
    return c;
}

Ingested ingest_raw(std::istream& in, const TapeConfig& config) {
    return ingest_records(parse_raw(in, RawSchema{config.delimiter, config.max_row_errors}), config);
}

Ingested ingest_records(ParsedRecords parsed, const TapeConfig& config) {
    IngestReport report;
    report.raw_records = parsed.records.size();
    report.row_errors = std::move(parsed.errors);
    report.after_quotes_present = parsed.has_after_quotes;
    if (parsed.records.empty()) throw DataError("raw tape contains no valid records");

    auto trades = aggregate(parsed.records, config.quote_mode);
    report.aggregated_trades = trades.size();
    auto filtered = filter_mismatches(std::move(trades), config.mismatch_threshold);
    report.dropped = filtered.dropped;
    report.dropped_fraction = filtered.dropped_fraction;
    report.mismatch_warning = filtered.warning;
    if (filtered.warning) {
        report.warnings.push_back("mismatch filter dropped " + format_double(filtered.dropped_fraction) +
                                  " of trades, above threshold " + format_double(config.mismatch_threshold));
    }
    if (!parsed.has_after_quotes) {
        report.warnings.push_back("no post-trade quote columns: quote_after taken from the next record, "
                                  "final trade uses its own pre-trade quote");
    }
    if (!report.row_errors.empty()) {
        report.warnings.push_back(std::to_string(report.row_errors.size()) + " malformed rows skipped");
    }
    report.mean_spread = config.mean_spread ? *config.mean_spread : mean_log_spread(parsed.records, config.quote_mode);
    Tape tape = build_tape(std::move(filtered.trades), config.label, report.mean_spread, config.activity_floor);
    return Ingested{std::move(tape), std::move(report), std::move(parsed.records)};
}

}  // namespace impact
