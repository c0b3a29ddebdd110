#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "impact/tape.hpp"

namespace impact::testing {

struct Row {
    std::int64_t firm;
    int sign;
    double volume;
    double before;
    double after;
};

// Tape with sigma = 1, so signed quote moves read directly in bps of the spread.
inline Tape hand_tape(const std::vector<Row>& rows, std::size_t floor = 1) {
    std::vector<Trade> trades;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        Trade tr;
        tr.tick = static_cast<std::int64_t>(t);
        tr.trigger_id = firm_id(rows[t].firm);
        tr.sign = rows[t].sign;
        tr.volume = rows[t].volume;
        tr.quote_before = rows[t].before;
        tr.quote_after = rows[t].after;
        trades.push_back(tr);
    }
    return build_tape(std::move(trades), "hand", 100.0, floor);
}

inline std::string processed_text(const Tape& tape) {
    std::ostringstream out;
    write_processed(out, tape);
    return out.str();
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("impact_test_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

}  // namespace impact::testing
