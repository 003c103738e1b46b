#pragma once

// Content-addressed blob store: immutable put/get by SHA-256 identifier,
// direct pinning, pin-respecting garbage collection.
//
// Invariants:
//   - key = SHA-256(bytes), always; reads re-hash and fail closed on mismatch
//   - put is idempotent (one stored copy per content)
//   - writes are atomic (tmp + rename on the same filesystem)
//   - pinned blobs and gc roots survive every gc
//
// On-disk layout under root:
//   objects/<hex[0:2]>/<hex>   one file per blob
//   pins                       one hex cid per line, sorted, LF-terminated
//   lock                       advisory flock for cross-process mutations

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <set>
#include <vector>

#include "edg/cid.hpp"

namespace edg {

struct BlobInfo {
    Cid cid;
    std::uint64_t size = 0;
    bool pinned = false;
    std::int64_t created_at = 0;  // unix seconds
};

class CasStore {
public:
    explicit CasStore(std::filesystem::path root);

    Cid put(ByteSpan bytes);
    Bytes get(const Cid& cid) const;

    void pin(const Cid& cid);
    void unpin(const Cid& cid);
    bool pinned(const Cid& cid) const;

    // Removes exactly the blobs that are neither pinned nor in roots; returns
    // the removed cids (sorted).
    std::vector<Cid> gc(const std::set<Cid>& roots);

    bool contains(const Cid& cid) const;
    std::size_t object_count() const;
    std::vector<BlobInfo> list() const;

    // SHA-256 of whatever bytes are currently persisted for this cid, with no
    // integrity check. Audit hook for chain verification.
    std::optional<Hash256> stored_hash(const Cid& cid) const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path object_path(const Cid& cid) const;
    void load_pins();
    void save_pins_locked() const;

    std::filesystem::path root_;
    std::set<Cid> pins_;
    mutable std::mutex mu_;  // serializes put/pin/unpin/gc; reads are lock-free
};

}  // namespace edg
