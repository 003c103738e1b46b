#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edg/errors.hpp"

namespace edg {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;
using Hash256 = std::array<std::uint8_t, 32>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteSpan b) {
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

std::string hex_encode(ByteSpan bytes);
std::optional<Bytes> hex_decode(std::string_view hex);

// Big-endian integer packing, used by every canonical wire format.
void put_u64be(Bytes& out, std::uint64_t v);
void put_u32be(Bytes& out, std::uint32_t v);
std::uint64_t get_u64be(const std::uint8_t* p);
std::uint32_t get_u32be(const std::uint8_t* p);

// Sequential reader over a byte span. take() throws the error installed at
// construction when the input is shorter than requested, so each wire format
// reports its own malformed-input error.
class ByteReader {
public:
    ByteReader(ByteSpan data, Errc underflow_errc)
        : data_(data), underflow_errc_(underflow_errc) {}

    ByteSpan take(std::size_t n);
    std::uint8_t take_u8();
    std::uint32_t take_u32be();
    std::uint64_t take_u64be();
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    ByteSpan data_;
    std::size_t pos_ = 0;
    Errc underflow_errc_;
};

}  // namespace edg
