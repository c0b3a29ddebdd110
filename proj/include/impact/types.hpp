#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace impact {

// Exchange membership code of a market participant.
enum class FirmId : std::int64_t {};

constexpr std::int64_t to_int(FirmId id) noexcept { return static_cast<std::int64_t>(id); }
constexpr FirmId firm_id(std::int64_t v) noexcept { return static_cast<FirmId>(v); }

// Either the whole market or the trades triggered by a single firm.
struct Scope {
    std::optional<FirmId> firm;

    static Scope market() { return {}; }
    static Scope of(FirmId id) { return Scope{id}; }

    bool is_market() const noexcept { return !firm.has_value(); }
    std::string name() const {
        return firm ? "firm " + std::to_string(to_int(*firm)) : std::string("market");
    }
};

}  // namespace impact
