#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace impact {

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

std::optional<double> parse_double(std::string_view text);
std::optional<std::int64_t> parse_int(std::string_view text);

std::string_view trim(std::string_view text);
std::vector<std::string_view> split(std::string_view line, char delimiter);

// Flat `key = value` settings with `#` comments. Keys are case-sensitive.
class KeyValues {
public:
    static KeyValues parse(std::istream& in, const std::string& origin = "<config>");
    static KeyValues load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> text(const std::string& key) const;
    std::optional<double> number(const std::string& key) const;
    std::optional<std::int64_t> integer(const std::string& key) const;
    std::optional<bool> flag(const std::string& key) const;
    const std::map<std::string, std::string>& entries() const { return values_; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

private:
    std::map<std::string, std::string> values_;
    std::string origin_;
};

}  // namespace impact
