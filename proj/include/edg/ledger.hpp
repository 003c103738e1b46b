#pragma once

// Deterministic ledger state machine: append-only commit chain per repo,
// role-based permission checks, and an event log whose replay reproduces the
// full state bit-for-bit.
//
// Canonical signed commit payload (byte-exact):
//   "EDGC1" || repo_id (32) || seq (8 BE) || kind (1; 0=GENESIS, 1=PATCH,
//   2=CHECKPOINT_GENESIS) || cid (32) || parent_cid (32, all-zero when
//   absent) || dek_file_cid (32) || author_id (32) || timestamp (8 BE)
// The signature is ECDSA over SHA-256 of that payload.
//
// Persistence: events.log is the authoritative append-only stream (COMMITTED
// events embed the full record); records.log carries the same commit records.
// Both are length-prefixed canonical bytes. Opening a ledger rebuilds the
// index tolerantly — tampered records are indexed, not rejected, so
// verify_chain can name them; commit_data validates strictly on append.
//
// Writers are serialized (per process by mutex, across processes by an
// advisory flock); a commit whose parent no longer matches the head loses
// with StaleParent and must refresh and retry.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <vector>

#include "edg/cid.hpp"
#include "edg/crypto.hpp"

namespace edg {

enum class CommitKind : std::uint8_t {
    genesis = 0,
    patch = 1,
    checkpoint_genesis = 2,
};

const char* commit_kind_name(CommitKind k);

enum class Role : std::uint8_t {
    owner = 0,
    contributor = 1,
    reviewer = 2,
};

const char* role_name(Role r);
std::optional<Role> role_from_name(std::string_view name);

struct CommitRecord {
    Hash256 repo_id{};
    std::uint64_t seq = 0;
    CommitKind kind = CommitKind::genesis;
    Cid cid;
    std::optional<Cid> parent_cid;
    Cid dek_file_cid;
    Hash256 author_id{};
    std::uint64_t timestamp = 0;
    Bytes signature;

    Bytes canonical_payload() const;
    Bytes serialize() const;  // canonical payload || sig_len (4 BE) || sig
    static CommitRecord parse(ByteSpan bytes);

    bool is_genesis_kind() const { return kind != CommitKind::patch; }
    bool operator==(const CommitRecord&) const = default;
};

struct RosterEntry {
    Role role = Role::reviewer;
    Bytes sign_pub;
    Bytes enc_pub;

    bool operator==(const RosterEntry&) const = default;
};

struct RepoConfig {
    std::uint64_t checkpoint_interval = 16;
    std::map<Hash256, RosterEntry> roster;

    Bytes canonical() const;
    static RepoConfig parse(ByteSpan bytes);
    Hash256 config_hash() const { return sha256(canonical()); }

    bool operator==(const RepoConfig&) const = default;
};

enum class EventKind : std::uint8_t {
    repo_created = 0,
    committed = 1,
    role_set = 2,
};

const char* event_kind_name(EventKind k);

// Roster change carried by a ROLE_SET event. `role` empty means removal.
struct RoleChange {
    Hash256 author_id{};
    Hash256 member_id{};
    std::optional<Role> role;
    Bytes sign_pub;
    Bytes enc_pub;

    bool operator==(const RoleChange&) const = default;
};

struct LedgerEvent {
    std::uint64_t event_seq = 0;  // gapless per repo
    EventKind kind = EventKind::repo_created;
    std::uint64_t timestamp = 0;
    Hash256 repo_id{};
    Bytes payload;

    Bytes serialize() const;
    static LedgerEvent parse(ByteSpan bytes);

    // Typed payload views; nullopt when the kind does not match.
    std::optional<CommitRecord> committed_record() const;
    std::optional<RoleChange> role_change() const;
    std::optional<RepoConfig> created_config() const;

    bool operator==(const LedgerEvent&) const = default;
};

struct CommitAudit {
    std::uint64_t seq = 0;
    bool structure_ok = true;   // position/repo binding and record-file copy agree
    bool parent_ok = true;
    bool sig_ok = true;
    bool author_ok = true;      // author held a committing role at commit time
    bool payload_ok = true;     // stored payload blob still hashes to cid
    bool dek_file_ok = true;    // same for the DEK file blob
    bool checkpoint_ok = true;

    bool ok() const {
        return structure_ok && parent_ok && sig_ok && author_ok && payload_ok && dek_file_ok &&
               checkpoint_ok;
    }
};

struct AuditReport {
    std::vector<CommitAudit> commits;
    std::vector<std::string> notes;
    bool ok = true;

    std::optional<std::uint64_t> first_bad_seq() const;
};

// Maps a cid to the SHA-256 of whatever bytes are currently persisted for it,
// or nullopt when the blob is gone.
using BlobHashLookup = std::function<std::optional<Hash256>(const Cid&)>;

class Ledger {
public:
    // In-memory ledger (no persistence). Used for event replay and tests.
    Ledger();
    // Persistent ledger; creates the directory on first open.
    explicit Ledger(std::filesystem::path dir);

    Hash256 create_repo(const PublicIdentity& owner, const RepoConfig& config,
                        std::uint64_t created_at);

    std::uint64_t commit_data(const Hash256& repo_id, const Hash256& caller_id, const Cid& new_cid,
                              const std::optional<Cid>& parent_cid, const Cid& dek_file_cid,
                              CommitKind kind, std::uint64_t timestamp, ByteSpan signature);

    CommitRecord get_head(const Hash256& repo_id) const;
    std::optional<CommitRecord> head_opt(const Hash256& repo_id) const;
    CommitRecord get_commit(const Hash256& repo_id, std::uint64_t seq) const;
    CommitRecord get_by_cid(const Hash256& repo_id, const Cid& cid) const;

    void set_role(const Hash256& repo_id, const Hash256& caller_id, const Hash256& member_id,
                  std::optional<Role> role, ByteSpan sign_pub, ByteSpan enc_pub,
                  std::uint64_t timestamp);

    std::vector<LedgerEvent> events(const Hash256& repo_id, std::uint64_t from_event_seq) const;

    AuditReport verify_chain(const Hash256& repo_id, const BlobHashLookup& lookup) const;

    bool repo_exists(const Hash256& repo_id) const;
    RepoConfig repo_config(const Hash256& repo_id) const;
    std::optional<Role> role_of(const Hash256& repo_id, const Hash256& member_id) const;
    std::uint64_t checkpoint_interval(const Hash256& repo_id) const;
    // Highest genesis-kind seq at or below `seq`.
    std::uint64_t segment_start(const Hash256& repo_id, std::uint64_t seq) const;
    std::vector<CommitRecord> records(const Hash256& repo_id) const;
    std::vector<Hash256> repo_ids() const;

    // Re-reads anything other writers appended to the backing files.
    void refresh();

    // Every event across all repos, in journal order.
    std::vector<LedgerEvent> journal() const;

    // Fresh in-memory state machine folded over `events`.
    static Ledger replay(const std::vector<LedgerEvent>& events);

    // Canonical serialization of the whole state; replay determinism is
    // asserted by comparing these byte-for-byte.
    Bytes canonical_state() const;

private:
    struct RepoState {
        std::uint64_t created_at = 0;
        RepoConfig config;  // current roster
        std::vector<CommitRecord> records;
        std::vector<LedgerEvent> events;
        std::map<Cid, std::uint64_t> by_cid;
        std::vector<std::uint64_t> genesis_seqs;
        // sign keys ever registered, so removed members still verify
        std::map<Hash256, Bytes> key_archive;
        // open-time cross-check results between events.log and records.log
        std::set<std::uint64_t> mismatched_file_records;
        std::uint64_t file_record_count = 0;
        std::vector<std::string> anomaly_notes;
    };

    void apply_event(const LedgerEvent& ev);
    void consume_file_record(ByteSpan bytes);
    void persist_and_apply(const LedgerEvent& ev);
    void refresh_inner();  // caller holds mu_ exclusively and the file lock
    const RepoState& repo_or_throw(const Hash256& repo_id) const;

    std::optional<std::filesystem::path> dir_;
    std::map<Hash256, RepoState> repos_;
    std::vector<LedgerEvent> journal_;
    // (repo, seq) of every COMMITTED event in journal order; records.log
    // entries must align with this sequence
    std::vector<std::pair<Hash256, std::uint64_t>> committed_refs_;
    std::uint64_t file_records_seen_ = 0;
    std::uint64_t events_offset_ = 0;
    std::uint64_t records_offset_ = 0;
    // owned indirectly so Ledger stays movable
    mutable std::unique_ptr<std::shared_mutex> mu_ = std::make_unique<std::shared_mutex>();
};

}  // namespace edg
