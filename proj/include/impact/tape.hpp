#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "impact/format.hpp"
#include "impact/types.hpp"

namespace impact {

// How the bid/ask columns of a raw file are expressed.
//   price:  quotes are prices; the mid-quote is (ln a + ln b) / 2.
//   logmid: quotes are already logarithms; the mid-quote is (a + b) / 2.
enum class QuoteMode { price, logmid };

QuoteMode parse_quote_mode(std::string_view text);
std::string_view to_string(QuoteMode mode);

// One row of the unprocessed tape. The pre-trade quote is mandatory; the
// optional post-trade quote columns (bid_after, ask_after) give the quote
// prevailing immediately after the row executed.
struct TradeRecord {
    std::int64_t second = 0;
    FirmId buyer_id{};
    FirmId seller_id{};
    int sign = 1;
    std::int64_t shares = 1;
    double price = 1.0;
    double bid_quote = 0.0;
    double ask_quote = 0.0;
    std::optional<double> bid_after;
    std::optional<double> ask_after;
    std::size_t line = 0;

    FirmId trigger() const noexcept { return sign > 0 ? buyer_id : seller_id; }
};

// A market order as intended by its triggering firm, after merging.
// `shares` and `second` are bookkeeping for raw input and are zero when a
// trade was read from a processed file.
struct Trade {
    std::int64_t tick = 0;
    FirmId trigger_id{};
    int sign = 1;
    double volume = 0.0;
    double quote_before = 0.0;
    double quote_after = 0.0;
    std::int64_t shares = 0;
    std::int64_t second = 0;

    double signed_move() const noexcept { return sign * (quote_after - quote_before); }
};

struct RowError {
    std::size_t line = 0;
    std::string message;
};

struct RawSchema {
    char delimiter = ',';
    // Parsing aborts with a DataError once more rows than this are malformed.
    std::size_t max_row_errors = 1000;
};

struct ParsedRecords {
    std::vector<TradeRecord> records;
    std::vector<RowError> errors;
    bool has_after_quotes = false;
};

ParsedRecords parse_raw(std::istream& in, const RawSchema& schema = {});

double mid_quote(double bid, double ask, QuoteMode mode);

// Merges maximal runs of consecutive records sharing (second, trigger, sign).
// The run's quote_before is the first record's pre-trade mid; its quote_after is
// the last record's post-trade mid when present, otherwise the next record's
// pre-trade mid, and for the final run without post-trade columns its own
// pre-trade mid.
std::vector<Trade> aggregate(const std::vector<TradeRecord>& records, QuoteMode mode);

// One trade per record with no merging, for comparing raw against processed estimates.
std::vector<Trade> records_as_trades(const std::vector<TradeRecord>& records, QuoteMode mode);

// Mean of (ln a - ln b), or of (a - b) in logmid mode, over the records.
double mean_log_spread(const std::vector<TradeRecord>& records, QuoteMode mode);

struct FilterResult {
    std::vector<Trade> trades;
    std::size_t dropped = 0;
    double dropped_fraction = 0.0;
    bool warning = false;
};

// Removes trades whose quote moved against their sign and re-numbers ticks.
FilterResult filter_mismatches(std::vector<Trade> trades, double warn_threshold = 0.05);

constexpr std::size_t default_activity_floor = 10000;

// Immutable tick-time trade sequence with a per-firm index.
class Tape {
public:
    const std::vector<Trade>& trades() const noexcept { return trades_; }
    std::size_t size() const noexcept { return trades_.size(); }
    const std::string& label() const noexcept { return label_; }
    double mean_spread() const noexcept { return mean_spread_; }
    double sigma() const noexcept { return mean_spread_ / 100.0; }
    std::size_t activity_floor() const noexcept { return activity_floor_; }

    std::span<const int> signs() const noexcept { return signs_; }
    std::span<const double> quotes_before() const noexcept { return before_; }
    std::span<const double> quotes_after() const noexcept { return after_; }
    std::span<const double> volumes() const noexcept { return volume_; }
    std::span<const std::size_t> firm_slots() const noexcept { return slot_; }

    // Firms in ascending id order.
    const std::vector<FirmId>& firms() const noexcept { return firms_; }
    bool has_firm(FirmId id) const noexcept;
    // Ordered ticks triggered by the firm; empty for unknown firms.
    std::span<const std::size_t> ticks_of(FirmId id) const noexcept;
    std::size_t trade_count(FirmId id) const noexcept { return ticks_of(id).size(); }
    double participation(FirmId id) const noexcept;
    bool eligible(FirmId id) const noexcept { return trade_count(id) >= activity_floor_; }
    std::vector<FirmId> eligible_firms() const;

    // Copy of this tape with the trigger of every tick replaced.
    Tape with_triggers(const std::vector<FirmId>& triggers) const;

    friend Tape build_tape(std::vector<Trade> trades, std::string label, double mean_spread,
                           std::size_t activity_floor);

private:
    Tape() = default;
    void index();

    std::vector<Trade> trades_;
    std::string label_;
    double mean_spread_ = 0.0;
    std::size_t activity_floor_ = default_activity_floor;
    std::vector<int> signs_;
    std::vector<double> before_, after_, volume_;
    std::vector<FirmId> firms_;
    std::vector<std::vector<std::size_t>> firm_ticks_;
    std::vector<std::size_t> slot_;
};

Tape build_tape(std::vector<Trade> trades, std::string label, double mean_spread,
                std::size_t activity_floor = default_activity_floor);

// Canonical processed-tape text:
//   # label=<label> mean_spread=<value>
//   tick,trigger_id,sign,volume,quote_before,quote_after
void write_processed(std::ostream& out, const Tape& tape);

struct ProcessedReadOptions {
    std::optional<std::string> label;
    std::optional<double> mean_spread;
    std::size_t activity_floor = default_activity_floor;
};

Tape read_processed(std::istream& in, const ProcessedReadOptions& options = {});

struct TapeConfig {
    QuoteMode quote_mode = QuoteMode::price;
    std::size_t activity_floor = default_activity_floor;
    double mismatch_threshold = 0.05;
    std::optional<double> mean_spread;
    char delimiter = ',';
    std::size_t max_row_errors = 1000;
    std::string label = "tape";

    static TapeConfig from(const KeyValues& kv);
};

struct IngestReport {
    std::size_t raw_records = 0;
    std::vector<RowError> row_errors;
    std::size_t aggregated_trades = 0;
    std::size_t dropped = 0;
    double dropped_fraction = 0.0;
    bool mismatch_warning = false;
    bool after_quotes_present = false;
    double mean_spread = 0.0;
    std::vector<std::string> warnings;
};

struct Ingested {
    Tape tape;
    IngestReport report;
    std::vector<TradeRecord> records;
};

// parse_raw, aggregate, filter_mismatches and build_tape in sequence.
Ingested ingest_raw(std::istream& in, const TapeConfig& config);
Ingested ingest_records(ParsedRecords parsed, const TapeConfig& config);

}  // namespace impact
