#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "impact/propagator.hpp"
#include "impact/rng.hpp"
#include "impact/tape.hpp"

namespace impact {

struct KernelSpec {
    double gamma0 = 3.5;
    double l0 = 21.3;
    double beta = 0.375;
    // The form applies for 1 <= l <= horizon; older trades keep weight G(horizon).
    std::size_t horizon = 1000;

    KernelForm form() const {
        KernelForm f;
        f.gamma0 = gamma0;
        f.l0 = l0;
        f.beta = beta;
        return f;
    }
    double at(std::size_t l) const;
};

// Metaorder run lengths: i.i.d. signs, a fixed tail exponent psi in (1, 2) with
// P(L >= x) ~ x^-psi, or a psi calibrated to the manifest's target_gamma.
struct TailMemoryless {};
struct TailCalibrated {};
using TailSpec = std::variant<TailMemoryless, TailCalibrated, double>;

struct FirmSpec {
    std::int64_t id = 0;
    double weight = 0.0;
    double alpha = 0.25;
    std::optional<double> c;
    double mean_volume = 10000.0;
    TailSpec tail = TailCalibrated{};
    std::optional<KernelSpec> kernel;
};

struct ConstraintSpec {
    double v0 = 60000.0;
    double delta0 = 40.0;
};

struct SyntheticManifest {
    std::size_t n_trades = 0;
    std::uint64_t seed = 0;
    std::string label = "synthetic";
    double mean_spread = 1e-3;
    double reference_price = 20.0;
    double tick_size = 0.0;
    double volume_gamma = 2.95;
    // Standard deviation of the price noise between trades, in bps of the spread.
    double noise_scale = 0.0;
    // Log-standard deviation of a mean-one multiplicative factor on each impact.
    double impact_noise = 0.0;
    double mismatch_rate = 0.0;
    double split_probability = 0.0;
    std::size_t activity_floor = default_activity_floor;
    std::optional<double> target_gamma;
    std::optional<ConstraintSpec> constraint;
    KernelSpec kernel;
    std::vector<FirmSpec> firms;

    // Throws ConfigError naming the first violated requirement.
    void validate() const;
    double sigma() const noexcept { return mean_spread / 100.0; }
    double impact_coefficient(const FirmSpec& firm) const;
};

SyntheticManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticManifest& m);
SyntheticManifest load_manifest(const std::filesystem::path& path);

// Draw from the unit-mean volume law by inverse CDF.
double sample_volume_law(Rng& rng, double gamma);

// Run lengths on the quantile grid u_k = (k + 1/2) / M, with M the smallest grid
// whose lengths cover n trades.
std::vector<std::uint64_t> metaorder_lengths(std::size_t n, double psi);

// Expected market sign correlation for firms with the given weights and tail
// exponents (0 for memoryless), lags 0..max_lag.
std::vector<double> expected_sign_correlation(std::size_t n_trades, const std::vector<double>& weights,
                                              const std::vector<double>& psi, std::size_t max_lag);

// Tail exponent shared by all calibrated firms that makes the expected market
// correlation decay with exponent target_gamma on lags [10, 1000].
double calibrate_tail(const SyntheticManifest& m);

struct SignFlow {
    std::vector<std::uint32_t> firm;  // index into manifest.firms
    std::vector<int> sign;
    std::vector<double> psi;          // per firm; 0 for memoryless
};

// Signs for `total` ticks.
SignFlow generate_signs(const SyntheticManifest& m, std::size_t total);

struct SyntheticTape {
    // Raw records after burn-in, in emission order.
    std::vector<TradeRecord> records;
    Tape tape;
    IngestReport report;
    std::vector<double> psi;
    std::size_t burn_in = 0;
};

// Generates records and runs them through the raw-tape pipeline in logmid mode.
SyntheticTape generate(const SyntheticManifest& m);

// Raw tape text with post-trade quote columns, readable by parse_raw.
void write_raw(std::ostream& out, const std::vector<TradeRecord>& records);

struct EmitPaths {
    std::filesystem::path tape;
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> raw;
};

// Writes tape.csv and manifest.json (and raw.csv when requested) into dir.
EmitPaths emit_tape(const SyntheticManifest& m, const std::filesystem::path& dir, bool emit_raw = false);

}  // namespace impact
