#pragma once

#include <compare>
#include <optional>
#include <string>

#include "edg/bytes.hpp"

namespace edg {

// Content identifier: SHA-256 of a blob's exact bytes. Text form is 64
// lowercase hex characters.
struct Cid {
    Hash256 digest{};

    static Cid of(ByteSpan blob);
    static std::optional<Cid> from_hex(std::string_view hex);

    std::string hex() const { return hex_encode(digest); }
    bool is_zero() const;

    auto operator<=>(const Cid&) const = default;
};

}  // namespace edg
