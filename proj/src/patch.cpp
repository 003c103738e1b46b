#include "edg/patch.hpp"

#include <cstring>
#include <unordered_map>

#include "edg/crypto.hpp"

namespace edg {

namespace {

constexpr std::string_view kPatchMagic = "EDGP1";
constexpr std::uint8_t kOpCopy = 0x01;
constexpr std::uint8_t kOpInsert = 0x02;

// Chunking parameters: geometric boundary spacing with mean 2^13 = 8 KiB,
// clamped to [2 KiB, 64 KiB].
constexpr std::size_t kMinChunk = 2048;
constexpr std::size_t kMaxChunk = 65536;
constexpr std::uint64_t kBoundaryMask = (std::uint64_t(1) << 13) - 1;

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Fixed gear table so chunk boundaries are identical across runs and builds.
const std::array<std::uint64_t, 256>& gear_table() {
    static const std::array<std::uint64_t, 256> table = [] {
        std::array<std::uint64_t, 256> t{};
        std::uint64_t state = 0x6d67a5f3c8e21b04ULL;
        for (auto& v : t) v = splitmix64(state);
        return t;
    }();
    return table;
}

struct Chunk {
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

std::vector<Chunk> chunk_boundaries(ByteSpan data) {
    const auto& gear = gear_table();
    std::vector<Chunk> chunks;
    std::size_t start = 0;
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        h = (h << 1) + gear[data[i]];
        std::size_t len = i + 1 - start;
        if ((len >= kMinChunk && (h & kBoundaryMask) == 0) || len >= kMaxChunk) {
            chunks.push_back({start, len});
            start = i + 1;
            h = 0;
        }
    }
    if (start < data.size()) chunks.push_back({start, data.size() - start});
    return chunks;
}

std::vector<Hash256> chunk_hashes(ByteSpan data, const std::vector<Chunk>& chunks,
                                  bool parallel) {
    std::vector<Hash256> hashes(chunks.size());
#ifdef _OPENMP
    if (parallel) {
#pragma omp parallel for schedule(dynamic, 4)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(chunks.size()); ++i)
            hashes[i] = sha256(data.subspan(chunks[i].offset, chunks[i].length));
        return hashes;
    }
#else
    (void)parallel;
#endif
    for (std::size_t i = 0; i < chunks.size(); ++i)
        hashes[i] = sha256(data.subspan(chunks[i].offset, chunks[i].length));
    return hashes;
}

struct Hash256Hasher {
    std::size_t operator()(const Hash256& h) const {
        std::uint64_t v;
        std::memcpy(&v, h.data(), sizeof(v));
        return static_cast<std::size_t>(v);
    }
};

void emit_copy(std::vector<PatchOp>& ops, std::uint64_t offset, std::uint64_t length) {
    if (!ops.empty()) {
        if (auto* prev = std::get_if<CopyOp>(&ops.back());
            prev && prev->offset + prev->length == offset) {
            prev->length += length;
            return;
        }
    }
    ops.push_back(CopyOp{offset, length});
}

void emit_insert(std::vector<PatchOp>& ops, ByteSpan bytes) {
    if (!ops.empty()) {
        if (auto* prev = std::get_if<InsertOp>(&ops.back())) {
            prev->data.insert(prev->data.end(), bytes.begin(), bytes.end());
            return;
        }
    }
    ops.push_back(InsertOp{Bytes(bytes.begin(), bytes.end())});
}

PatchBlob diff_impl(ByteSpan base, ByteSpan target, const DiffOptions& opts, bool parallel) {
    if (base.size() > opts.max_input || target.size() > opts.max_input)
        fail(Errc::input_too_large, "diff input exceeds configured maximum");

    PatchBlob patch;
    patch.base_len = base.size();
    patch.target_len = target.size();

    std::vector<Chunk> base_chunks = chunk_boundaries(base);
    std::vector<Chunk> target_chunks = chunk_boundaries(target);
    std::vector<Hash256> base_hashes = chunk_hashes(base, base_chunks, parallel);
    std::vector<Hash256> target_hashes = chunk_hashes(target, target_chunks, parallel);

    std::unordered_map<Hash256, std::vector<std::uint32_t>, Hash256Hasher> index;
    index.reserve(base_chunks.size() * 2);
    for (std::uint32_t i = 0; i < base_chunks.size(); ++i)
        index[base_hashes[i]].push_back(i);

    std::uint64_t prev_copy_end = 0;
    for (std::size_t t = 0; t < target_chunks.size(); ++t) {
        const Chunk& tc = target_chunks[t];
        ByteSpan tbytes = target.subspan(tc.offset, tc.length);

        const std::vector<std::uint32_t>* candidates = nullptr;
        if (auto it = index.find(target_hashes[t]); it != index.end()) candidates = &it->second;

        const Chunk* match = nullptr;
        if (candidates) {
            // Prefer the candidate that extends the previous COPY so runs of
            // equal chunks coalesce into one op.
            for (std::uint32_t bi : *candidates) {
                const Chunk& bc = base_chunks[bi];
                if (bc.length != tc.length) continue;
                if (bc.offset == prev_copy_end &&
                    std::memcmp(base.data() + bc.offset, tbytes.data(), tc.length) == 0) {
                    match = &bc;
                    break;
                }
            }
            if (!match) {
                for (std::uint32_t bi : *candidates) {
                    const Chunk& bc = base_chunks[bi];
                    if (bc.length == tc.length &&
                        std::memcmp(base.data() + bc.offset, tbytes.data(), tc.length) == 0) {
                        match = &bc;
                        break;
                    }
                }
            }
        }

        if (match) {
            emit_copy(patch.ops, match->offset, match->length);
            prev_copy_end = match->offset + match->length;
        } else {
            emit_insert(patch.ops, tbytes);
        }
    }
    return patch;
}

std::uint64_t op_output_length(const PatchOp& op) {
    if (auto* c = std::get_if<CopyOp>(&op)) return c->length;
    return std::get<InsertOp>(op).data.size();
}

}  // namespace

PatchBlob diff(ByteSpan base, ByteSpan target, const DiffOptions& opts) {
    return diff_impl(base, target, opts, opts.parallel);
}

PatchBlob diff_serial(ByteSpan base, ByteSpan target, const DiffOptions& opts) {
    return diff_impl(base, target, opts, false);
}

void PatchBlob::validate() const {
    std::uint64_t total = 0;
    for (const PatchOp& op : ops) {
        if (auto* c = std::get_if<CopyOp>(&op)) {
            if (c->length == 0) fail(Errc::malformed_patch, "zero-length COPY");
            if (c->offset > base_len || c->length > base_len - c->offset)
                fail(Errc::malformed_patch, "COPY window outside base");
            total += c->length;
        } else {
            const auto& ins = std::get<InsertOp>(op);
            if (ins.data.empty()) fail(Errc::malformed_patch, "zero-length INSERT");
            total += ins.data.size();
        }
        if (total > target_len) fail(Errc::malformed_patch, "op outputs exceed target length");
    }
    if (total != target_len) fail(Errc::malformed_patch, "op outputs do not sum to target length");
}

Bytes PatchBlob::serialize() const {
    Bytes out(kPatchMagic.begin(), kPatchMagic.end());
    put_u64be(out, base_len);
    put_u64be(out, target_len);
    for (const PatchOp& op : ops) {
        if (auto* c = std::get_if<CopyOp>(&op)) {
            out.push_back(kOpCopy);
            put_u64be(out, c->offset);
            put_u64be(out, c->length);
        } else {
            const auto& ins = std::get<InsertOp>(op);
            out.push_back(kOpInsert);
            put_u64be(out, ins.data.size());
            out.insert(out.end(), ins.data.begin(), ins.data.end());
        }
    }
    return out;
}

PatchBlob PatchBlob::parse(ByteSpan bytes) {
    ByteReader r(bytes, Errc::malformed_patch);
    ByteSpan magic = r.take(kPatchMagic.size());
    if (!std::equal(magic.begin(), magic.end(), kPatchMagic.begin(), kPatchMagic.end()))
        fail(Errc::malformed_patch, "bad patch magic");

    PatchBlob patch;
    patch.base_len = r.take_u64be();
    patch.target_len = r.take_u64be();
    while (!r.done()) {
        std::uint8_t tag = r.take_u8();
        if (tag == kOpCopy) {
            CopyOp op;
            op.offset = r.take_u64be();
            op.length = r.take_u64be();
            patch.ops.push_back(op);
        } else if (tag == kOpInsert) {
            std::uint64_t len = r.take_u64be();
            if (len > r.remaining()) fail(Errc::malformed_patch, "INSERT length overruns input");
            ByteSpan data = r.take(static_cast<std::size_t>(len));
            patch.ops.push_back(InsertOp{Bytes(data.begin(), data.end())});
        } else {
            fail(Errc::malformed_patch, "unknown op tag");
        }
    }
    patch.validate();
    return patch;
}

PatchBlob parse_patch(ByteSpan bytes) { return PatchBlob::parse(bytes); }

Bytes apply(ByteSpan base, const PatchBlob& patch) {
    patch.validate();
    if (base.size() != patch.base_len)
        fail(Errc::base_length_mismatch,
             "base is " + std::to_string(base.size()) + " bytes, patch expects " +
                 std::to_string(patch.base_len));

    Bytes out;
    out.reserve(static_cast<std::size_t>(patch.target_len));
    for (const PatchOp& op : patch.ops) {
        if (auto* c = std::get_if<CopyOp>(&op)) {
            out.insert(out.end(), base.begin() + static_cast<std::ptrdiff_t>(c->offset),
                       base.begin() + static_cast<std::ptrdiff_t>(c->offset + c->length));
        } else {
            const auto& ins = std::get<InsertOp>(op);
            out.insert(out.end(), ins.data.begin(), ins.data.end());
        }
    }
    return out;
}

}  // namespace edg
