#include "impact/format.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <system_error>

#include "impact/error.hpp"

namespace impact {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) return std::nullopt;
    return v;
}

std::optional<std::int64_t> parse_int(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    std::int64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) return std::nullopt;
    return v;
}

std::string_view trim(std::string_view text) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
    while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
    return text;
}

std::vector<std::string_view> split(std::string_view line, char delimiter) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delimiter, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            return out;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

KeyValues KeyValues::parse(std::istream& in, const std::string& origin) {
    KeyValues kv;
    kv.origin_ = origin;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view = line;
        if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = trim(view);
        if (view.empty()) continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const auto key = trim(view.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv.values_[std::string(key)] = std::string(trim(view.substr(eq + 1)));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in, path.string());
}

std::optional<std::string> KeyValues::text(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::optional<double> KeyValues::number(const std::string& key) const {
    const auto t = text(key);
    if (!t) return std::nullopt;
    const auto v = parse_double(*t);
    if (!v) throw ConfigError(origin_ + ": " + key + " is not a number: " + *t);
    return v;
}

std::optional<std::int64_t> KeyValues::integer(const std::string& key) const {
    const auto t = text(key);
    if (!t) return std::nullopt;
    const auto v = parse_int(*t);
    if (!v) throw ConfigError(origin_ + ": " + key + " is not an integer: " + *t);
    return v;
}

std::optional<bool> KeyValues::flag(const std::string& key) const {
    const auto t = text(key);
    if (!t) return std::nullopt;
    if (*t == "true" || *t == "1" || *t == "yes") return true;
    if (*t == "false" || *t == "0" || *t == "no") return false;
    throw ConfigError(origin_ + ": " + key + " is not a boolean: " + *t);
}

}  // namespace impact
