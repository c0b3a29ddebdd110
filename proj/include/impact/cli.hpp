#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "impact/format.hpp"
#include "impact/propagator.hpp"

namespace impact::cli {

enum ExitCode : int { success = 0, usage_error = 1, data_error = 2, numerical_error = 3 };

// Settings of the `study` command. Each key can come from a key=value file and
// be overridden on the command line.
struct StudyConfig {
    std::optional<std::size_t> activity_floor;
    std::size_t bins = 25;
    std::size_t min_bin_count = 50;
    std::size_t min_samples = 100;
    std::size_t lag = 1000;
    double corr_window_lo = 10.0;
    double corr_window_hi = 1000.0;
    std::size_t lmax = 1000;
    std::size_t horizon = 0;
    double ridge = 0.0;
    ResponseConvention convention = ResponseConvention::post_trade;
    std::optional<double> kernel_window_lo;
    std::optional<double> kernel_window_hi;
    std::size_t replicates = 20;
    std::optional<std::uint64_t> seed;
    std::optional<double> v0;
    std::optional<double> delta0;
    std::vector<std::size_t> factorization_lags{1, 10, 100};
    std::vector<std::string> stages{"market", "firms", "kernel", "kappa", "null", "factorization"};
    bool include_lag0 = false;

    static StudyConfig from(const KeyValues& kv);
    bool wants(const std::string& stage) const;
};

// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace impact::cli
