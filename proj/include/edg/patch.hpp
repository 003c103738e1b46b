#pragma once

// Binary diff/apply engine. A patch is an ordered edit script of COPY (window
// into the base) and INSERT (literal bytes) ops whose outputs concatenate to
// the target.
//
// Wire format, all integers big-endian:
//   "EDGP1" || base_len (8) || target_len (8) || ops
//   op 0x01 = COPY   : offset (8), length (8)
//   op 0x02 = INSERT : length (8), bytes
// Zero-length ops are rejected; canonical patches never contain them.
//
// diff() finds matches by content-defined chunking: a gear rolling hash cuts
// both sides into chunks (mean ~8 KiB), matched by SHA-256 and confirmed
// byte-for-byte, so inserts and deletes re-align within a chunk or two.
// Chunk hashing is data-parallel; diff_serial() is the single-threaded
// reference the parallel path must match byte-for-byte.

#include <cstdint>
#include <variant>
#include <vector>

#include "edg/bytes.hpp"

namespace edg {

struct CopyOp {
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    bool operator==(const CopyOp&) const = default;
};

struct InsertOp {
    Bytes data;
    bool operator==(const InsertOp&) const = default;
};

using PatchOp = std::variant<CopyOp, InsertOp>;

struct PatchBlob {
    std::uint64_t base_len = 0;
    std::uint64_t target_len = 0;
    std::vector<PatchOp> ops;

    Bytes serialize() const;
    static PatchBlob parse(ByteSpan bytes);

    // Throws MalformedPatch unless every invariant holds: COPY windows inside
    // [0, base_len), no zero-length ops, op output lengths summing to
    // target_len.
    void validate() const;

    bool operator==(const PatchBlob&) const = default;
};

struct DiffOptions {
    std::uint64_t max_input = std::uint64_t(1) << 30;  // 1 GiB
    bool parallel = true;  // hash chunks with OpenMP when built with it
};

PatchBlob diff(ByteSpan base, ByteSpan target, const DiffOptions& opts = {});

// Single-threaded reference; identical output to diff() by construction.
PatchBlob diff_serial(ByteSpan base, ByteSpan target, const DiffOptions& opts = {});

Bytes apply(ByteSpan base, const PatchBlob& patch);

PatchBlob parse_patch(ByteSpan bytes);  // parse + validate

}  // namespace edg
