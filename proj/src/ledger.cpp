#include "edg/ledger.hpp"

#include <algorithm>
#include <mutex>
#include <cstring>

#include "fsutil.hpp"

namespace edg {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kPayloadMagic = "EDGC1";
constexpr std::string_view kStateMagic = "EDGS1";
constexpr std::size_t kCanonicalPayloadBytes = 5 + 32 + 8 + 1 + 32 + 32 + 32 + 32 + 8;
constexpr std::uint32_t kMaxEntryBytes = std::uint32_t(1) << 30;

Hash256 take_hash(ByteReader& r) {
    Hash256 h{};
    ByteSpan s = r.take(h.size());
    std::copy(s.begin(), s.end(), h.begin());
    return h;
}

void put_hash(Bytes& out, const Hash256& h) { out.insert(out.end(), h.begin(), h.end()); }

bool is_zero(const Hash256& h) {
    for (auto b : h)
        if (b) return false;
    return true;
}

void put_len_prefixed(Bytes& out, ByteSpan bytes) {
    put_u32be(out, static_cast<std::uint32_t>(bytes.size()));
    out.insert(out.end(), bytes.begin(), bytes.end());
}

}  // namespace

const char* commit_kind_name(CommitKind k) {
    switch (k) {
        case CommitKind::genesis: return "genesis";
        case CommitKind::patch: return "patch";
        case CommitKind::checkpoint_genesis: return "checkpoint_genesis";
    }
    return "unknown";
}

const char* role_name(Role r) {
    switch (r) {
        case Role::owner: return "owner";
        case Role::contributor: return "contributor";
        case Role::reviewer: return "reviewer";
    }
    return "unknown";
}

std::optional<Role> role_from_name(std::string_view name) {
    if (name == "owner") return Role::owner;
    if (name == "contributor") return Role::contributor;
    if (name == "reviewer") return Role::reviewer;
    return std::nullopt;
}

const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::repo_created: return "repo_created";
        case EventKind::committed: return "committed";
        case EventKind::role_set: return "role_set";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// CommitRecord
// ---------------------------------------------------------------------------

Bytes CommitRecord::canonical_payload() const {
    Bytes out(kPayloadMagic.begin(), kPayloadMagic.end());
    put_hash(out, repo_id);
    put_u64be(out, seq);
    out.push_back(static_cast<std::uint8_t>(kind));
    put_hash(out, cid.digest);
    put_hash(out, parent_cid ? parent_cid->digest : Hash256{});
    put_hash(out, dek_file_cid.digest);
    put_hash(out, author_id);
    put_u64be(out, timestamp);
    return out;
}

Bytes CommitRecord::serialize() const {
    Bytes out = canonical_payload();
    put_len_prefixed(out, signature);
    return out;
}

CommitRecord CommitRecord::parse(ByteSpan bytes) {
    ByteReader r(bytes, Errc::malformed_record);
    ByteSpan magic = r.take(kPayloadMagic.size());
    if (!std::equal(magic.begin(), magic.end(), kPayloadMagic.begin(), kPayloadMagic.end()))
        fail(Errc::malformed_record, "bad commit payload magic");

    CommitRecord rec;
    rec.repo_id = take_hash(r);
    rec.seq = r.take_u64be();
    std::uint8_t kind = r.take_u8();
    if (kind > 2) fail(Errc::malformed_record, "unknown commit kind");
    rec.kind = static_cast<CommitKind>(kind);
    rec.cid.digest = take_hash(r);
    Hash256 parent = take_hash(r);
    if (!is_zero(parent)) rec.parent_cid = Cid{parent};
    rec.dek_file_cid.digest = take_hash(r);
    rec.author_id = take_hash(r);
    rec.timestamp = r.take_u64be();
    std::uint32_t sig_len = r.take_u32be();
    if (sig_len > kMaxEntryBytes) fail(Errc::malformed_record, "signature length implausible");
    ByteSpan sig = r.take(sig_len);
    rec.signature.assign(sig.begin(), sig.end());
    if (!r.done()) fail(Errc::malformed_record, "trailing bytes after commit record");
    return rec;
}

// ---------------------------------------------------------------------------
// RepoConfig
// ---------------------------------------------------------------------------

Bytes RepoConfig::canonical() const {
    Bytes out;
    put_u64be(out, checkpoint_interval);
    put_u32be(out, static_cast<std::uint32_t>(roster.size()));
    for (const auto& [id, entry] : roster) {
        put_hash(out, id);
        out.push_back(static_cast<std::uint8_t>(entry.role));
        put_len_prefixed(out, entry.sign_pub);
        put_len_prefixed(out, entry.enc_pub);
    }
    return out;
}

RepoConfig RepoConfig::parse(ByteSpan bytes) {
    ByteReader r(bytes, Errc::malformed_record);
    RepoConfig cfg;
    cfg.checkpoint_interval = r.take_u64be();
    std::uint32_t count = r.take_u32be();
    for (std::uint32_t i = 0; i < count; ++i) {
        Hash256 id = take_hash(r);
        RosterEntry entry;
        std::uint8_t role = r.take_u8();
        if (role > 2) fail(Errc::malformed_record, "unknown role");
        entry.role = static_cast<Role>(role);
        std::uint32_t sp = r.take_u32be();
        ByteSpan sign_pub = r.take(sp);
        entry.sign_pub.assign(sign_pub.begin(), sign_pub.end());
        std::uint32_t ep = r.take_u32be();
        ByteSpan enc_pub = r.take(ep);
        entry.enc_pub.assign(enc_pub.begin(), enc_pub.end());
        cfg.roster.emplace(id, std::move(entry));
    }
    if (!r.done()) fail(Errc::malformed_record, "trailing bytes after roster");
    return cfg;
}

// ---------------------------------------------------------------------------
// LedgerEvent
// ---------------------------------------------------------------------------

Bytes LedgerEvent::serialize() const {
    Bytes out;
    put_u64be(out, event_seq);
    out.push_back(static_cast<std::uint8_t>(kind));
    put_u64be(out, timestamp);
    put_hash(out, repo_id);
    put_len_prefixed(out, payload);
    return out;
}

LedgerEvent LedgerEvent::parse(ByteSpan bytes) {
    ByteReader r(bytes, Errc::malformed_record);
    LedgerEvent ev;
    ev.event_seq = r.take_u64be();
    std::uint8_t kind = r.take_u8();
    if (kind > 2) fail(Errc::malformed_record, "unknown event kind");
    ev.kind = static_cast<EventKind>(kind);
    ev.timestamp = r.take_u64be();
    ev.repo_id = take_hash(r);
    std::uint32_t len = r.take_u32be();
    if (len > kMaxEntryBytes) fail(Errc::malformed_record, "event payload length implausible");
    ByteSpan payload = r.take(len);
    ev.payload.assign(payload.begin(), payload.end());
    if (!r.done()) fail(Errc::malformed_record, "trailing bytes after event");
    return ev;
}

std::optional<CommitRecord> LedgerEvent::committed_record() const {
    if (kind != EventKind::committed) return std::nullopt;
    return CommitRecord::parse(payload);
}

std::optional<RepoConfig> LedgerEvent::created_config() const {
    if (kind != EventKind::repo_created) return std::nullopt;
    return RepoConfig::parse(payload);
}

std::optional<RoleChange> LedgerEvent::role_change() const {
    if (kind != EventKind::role_set) return std::nullopt;
    ByteReader r(payload, Errc::malformed_record);
    RoleChange rc;
    rc.author_id = take_hash(r);
    rc.member_id = take_hash(r);
    std::uint8_t role = r.take_u8();
    if (role != 0xff) {
        if (role > 2) fail(Errc::malformed_record, "unknown role in role_set");
        rc.role = static_cast<Role>(role);
    }
    std::uint32_t sp = r.take_u32be();
    ByteSpan sign_pub = r.take(sp);
    rc.sign_pub.assign(sign_pub.begin(), sign_pub.end());
    std::uint32_t ep = r.take_u32be();
    ByteSpan enc_pub = r.take(ep);
    rc.enc_pub.assign(enc_pub.begin(), enc_pub.end());
    if (!r.done()) fail(Errc::malformed_record, "trailing bytes after role_set");
    return rc;
}

namespace {

Bytes encode_role_change(const RoleChange& rc) {
    Bytes out;
    put_hash(out, rc.author_id);
    put_hash(out, rc.member_id);
    out.push_back(rc.role ? static_cast<std::uint8_t>(*rc.role) : 0xff);
    put_len_prefixed(out, rc.sign_pub);
    put_len_prefixed(out, rc.enc_pub);
    return out;
}

}  // namespace

std::optional<std::uint64_t> AuditReport::first_bad_seq() const {
    for (const CommitAudit& c : commits)
        if (!c.ok()) return c.seq;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

Ledger::Ledger() = default;

Ledger::Ledger(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(*dir_, ec);
    if (ec) fail(Errc::io_failure, "cannot create ledger at " + dir_->string());
    std::unique_lock lk(*mu_);
    fsutil::FileLock flock(*dir_ / "lock");
    refresh_inner();
}

void Ledger::refresh() {
    if (!dir_) return;
    std::unique_lock lk(*mu_);
    fsutil::FileLock flock(*dir_ / "lock");
    refresh_inner();
}

// Reads whole files and consumes entries past the saved offsets. Torn trailing
// entries (mid-append crash) are left unconsumed for the next round.
void Ledger::refresh_inner() {
    bool found = false;
    Bytes events = fsutil::read_file(*dir_ / "events.log", found);
    while (events_offset_ + 4 <= events.size()) {
        std::uint32_t len = get_u32be(events.data() + events_offset_);
        if (len > kMaxEntryBytes || events_offset_ + 4 + len > events.size()) break;
        ByteSpan entry(events.data() + events_offset_ + 4, len);
        try {
            apply_event(LedgerEvent::parse(entry));
        } catch (const Error&) {
            // Unparseable journal entry: skip it; verify_chain surfaces the
            // gap via the records cross-check.
        }
        events_offset_ += 4 + len;
    }

    Bytes records = fsutil::read_file(*dir_ / "records.log", found);
    while (records_offset_ + 4 <= records.size()) {
        std::uint32_t len = get_u32be(records.data() + records_offset_);
        if (len > kMaxEntryBytes || records_offset_ + 4 + len > records.size()) break;
        consume_file_record(ByteSpan(records.data() + records_offset_ + 4, len));
        records_offset_ += 4 + len;
    }
}

// Tolerant fold: malformed pieces are indexed as anomalies, never rejected,
// so the audit path can point at them.
void Ledger::apply_event(const LedgerEvent& ev) {
    journal_.push_back(ev);
    switch (ev.kind) {
        case EventKind::repo_created: {
            RepoState& repo = repos_[ev.repo_id];  // last creation wins if duplicated
            repo.created_at = ev.timestamp;
            try {
                repo.config = RepoConfig::parse(ev.payload);
            } catch (const Error& e) {
                repo.anomaly_notes.push_back(std::string("unparseable repo config: ") + e.what());
            }
            for (const auto& [id, entry] : repo.config.roster)
                repo.key_archive.emplace(id, entry.sign_pub);
            repo.events.push_back(ev);
            break;
        }
        case EventKind::committed: {
            RepoState& repo = repos_[ev.repo_id];
            repo.events.push_back(ev);
            try {
                CommitRecord rec = CommitRecord::parse(ev.payload);
                committed_refs_.emplace_back(ev.repo_id, repo.records.size());
                repo.by_cid.emplace(rec.cid, repo.records.size());
                if (rec.is_genesis_kind()) repo.genesis_seqs.push_back(repo.records.size());
                repo.records.push_back(std::move(rec));
            } catch (const Error& e) {
                repo.anomaly_notes.push_back(std::string("unparseable commit event: ") + e.what());
            }
            break;
        }
        case EventKind::role_set: {
            RepoState& repo = repos_[ev.repo_id];
            repo.events.push_back(ev);
            try {
                RoleChange rc = *ev.role_change();
                if (rc.role) {
                    RosterEntry entry{*rc.role, rc.sign_pub, rc.enc_pub};
                    repo.config.roster[rc.member_id] = std::move(entry);
                    repo.key_archive.emplace(rc.member_id, rc.sign_pub);
                } else {
                    repo.config.roster.erase(rc.member_id);
                }
            } catch (const Error& e) {
                repo.anomaly_notes.push_back(std::string("unparseable role event: ") + e.what());
            }
            break;
        }
    }
}

// Aligns the i-th records.log entry with the i-th COMMITTED event and flags
// any byte disagreement at that commit's seq.
void Ledger::consume_file_record(ByteSpan bytes) {
    std::uint64_t index = file_records_seen_++;
    if (index >= committed_refs_.size()) {
        try {
            CommitRecord rec = CommitRecord::parse(bytes);
            auto it = repos_.find(rec.repo_id);
            if (it != repos_.end()) it->second.mismatched_file_records.insert(rec.seq);
        } catch (const Error&) {
            // Dangling unparseable record: nowhere to pin it; note globally on
            // every repo (single-repo ledgers in practice).
            for (auto& [id, repo] : repos_)
                repo.anomaly_notes.push_back("records file entry with no matching event");
        }
        return;
    }
    auto [repo_id, seq] = committed_refs_[static_cast<std::size_t>(index)];
    RepoState& repo = repos_[repo_id];
    repo.file_record_count = std::max(repo.file_record_count, seq + 1);
    Bytes expected = repo.records[static_cast<std::size_t>(seq)].serialize();
    if (expected.size() != bytes.size() ||
        !std::equal(expected.begin(), expected.end(), bytes.begin()))
        repo.mismatched_file_records.insert(seq);
}

void Ledger::persist_and_apply(const LedgerEvent& ev) {
    if (!dir_) {
        apply_event(ev);
        if (ev.kind == EventKind::committed) {
            // keep the cross-check counters coherent in memory-only mode
            file_records_seen_ = committed_refs_.size();
            repos_[ev.repo_id].file_record_count = repos_[ev.repo_id].records.size();
        }
        return;
    }

    Bytes entry;
    Bytes body = ev.serialize();
    put_len_prefixed(entry, body);
    fsutil::append_with_fsync(*dir_ / "events.log", entry);

    if (ev.kind == EventKind::committed) {
        // catch up any records.log shortfall from an interrupted append, then
        // write this record's copy
        refresh_inner();
        Bytes out;
        for (std::uint64_t i = file_records_seen_; i < committed_refs_.size(); ++i) {
            auto [repo_id, seq] = committed_refs_[static_cast<std::size_t>(i)];
            put_len_prefixed(out, repos_[repo_id].records[static_cast<std::size_t>(seq)].serialize());
        }
        if (!out.empty()) fsutil::append_with_fsync(*dir_ / "records.log", out);
        refresh_inner();
    } else {
        refresh_inner();
    }
}

const Ledger::RepoState& Ledger::repo_or_throw(const Hash256& repo_id) const {
    auto it = repos_.find(repo_id);
    if (it == repos_.end()) fail(Errc::repo_not_found, "no repo " + hex_encode(repo_id));
    return it->second;
}

Hash256 Ledger::create_repo(const PublicIdentity& owner, const RepoConfig& config,
                            std::uint64_t created_at) {
    if (config.checkpoint_interval < 1)
        fail(Errc::invalid_config, "checkpoint interval must be at least 1");
    std::size_t owners = 0;
    for (const auto& [id, entry] : config.roster) {
        if (entry.sign_pub.size() != kPubKeyBytes || entry.enc_pub.size() != kPubKeyBytes)
            fail(Errc::invalid_config, "member " + hex_encode(id) + " has malformed keys");
        if (sha256(entry.sign_pub) != id)
            fail(Errc::invalid_config,
                 "member id " + hex_encode(id) + " does not bind its signing key");
        if (entry.role == Role::owner) ++owners;
    }
    if (owners != 1) fail(Errc::invalid_config, "exactly one owner required");
    auto owner_it = config.roster.find(owner.id);
    if (owner_it == config.roster.end() || owner_it->second.role != Role::owner)
        fail(Errc::invalid_config, "creator must be the roster owner");
    if (owner_it->second.sign_pub != owner.sign_pub)
        fail(Errc::invalid_config, "creator keys do not match roster entry");

    Bytes seed(owner.id.begin(), owner.id.end());
    put_u64be(seed, created_at);
    put_hash(seed, config.config_hash());
    Hash256 repo_id = sha256(seed);

    std::unique_lock lk(*mu_);
    std::optional<fsutil::FileLock> flock;
    if (dir_) {
        flock.emplace(*dir_ / "lock");
        refresh_inner();
    }
    if (repos_.count(repo_id))
        fail(Errc::invalid_config, "repo already exists for this owner/timestamp/config");

    LedgerEvent ev;
    ev.event_seq = 0;
    ev.kind = EventKind::repo_created;
    ev.timestamp = created_at;
    ev.repo_id = repo_id;
    ev.payload = config.canonical();
    persist_and_apply(ev);
    return repo_id;
}

std::uint64_t Ledger::commit_data(const Hash256& repo_id, const Hash256& caller_id,
                                  const Cid& new_cid, const std::optional<Cid>& parent_cid,
                                  const Cid& dek_file_cid, CommitKind kind,
                                  std::uint64_t timestamp, ByteSpan signature) {
    std::unique_lock lk(*mu_);
    std::optional<fsutil::FileLock> flock;
    if (dir_) {
        flock.emplace(*dir_ / "lock");
        refresh_inner();
    }

    const RepoState& repo = repo_or_throw(repo_id);

    auto member = repo.config.roster.find(caller_id);
    if (member == repo.config.roster.end() || member->second.role == Role::reviewer)
        fail(Errc::permission_denied,
             "caller " + hex_encode(caller_id) + " may not publish commits");

    if (new_cid.is_zero() || dek_file_cid.is_zero())
        fail(Errc::malformed_record, "commit requires payload and DEK file cids");

    std::uint64_t seq = 0;
    if (!repo.records.empty()) {
        const CommitRecord& head = repo.records.back();
        if (!parent_cid || *parent_cid != head.cid)
            fail(Errc::stale_parent, "parent does not match head at seq " +
                                         std::to_string(head.seq));
        if (kind == CommitKind::genesis)
            fail(Errc::malformed_record, "genesis commit on a non-empty chain");
        seq = head.seq + 1;
    } else {
        if (parent_cid) fail(Errc::malformed_record, "first commit cannot have a parent");
        if (kind != CommitKind::genesis)
            fail(Errc::malformed_record, "first commit must be genesis");
    }

    if (kind == CommitKind::patch) {
        std::uint64_t last_genesis = repo.genesis_seqs.empty() ? 0 : repo.genesis_seqs.back();
        if (seq - last_genesis > repo.config.checkpoint_interval)
            fail(Errc::checkpoint_required,
                 "patch chain reached interval " +
                     std::to_string(repo.config.checkpoint_interval) +
                     "; commit must start a new segment");
    }

    CommitRecord rec;
    rec.repo_id = repo_id;
    rec.seq = seq;
    rec.kind = kind;
    rec.cid = new_cid;
    rec.parent_cid = parent_cid;
    rec.dek_file_cid = dek_file_cid;
    rec.author_id = caller_id;
    rec.timestamp = timestamp;
    rec.signature.assign(signature.begin(), signature.end());

    if (!verify_sig(rec.canonical_payload(), rec.signature, member->second.sign_pub))
        fail(Errc::bad_signature, "signature does not verify over canonical payload");

    LedgerEvent ev;
    ev.event_seq = repo.events.size();
    ev.kind = EventKind::committed;
    ev.timestamp = timestamp;
    ev.repo_id = repo_id;
    ev.payload = rec.serialize();
    persist_and_apply(ev);
    return seq;
}

void Ledger::set_role(const Hash256& repo_id, const Hash256& caller_id, const Hash256& member_id,
                      std::optional<Role> role, ByteSpan sign_pub, ByteSpan enc_pub,
                      std::uint64_t timestamp) {
    std::unique_lock lk(*mu_);
    std::optional<fsutil::FileLock> flock;
    if (dir_) {
        flock.emplace(*dir_ / "lock");
        refresh_inner();
    }

    const RepoState& repo = repo_or_throw(repo_id);

    auto caller = repo.config.roster.find(caller_id);
    if (caller == repo.config.roster.end() || caller->second.role != Role::owner)
        fail(Errc::permission_denied, "only the owner may modify the roster");

    auto existing = repo.config.roster.find(member_id);
    if (!role) {
        if (existing == repo.config.roster.end())
            fail(Errc::member_not_found, "no roster entry for " + hex_encode(member_id));
        if (existing->second.role == Role::owner)
            fail(Errc::cannot_orphan_repo, "cannot remove the sole owner");
    } else {
        if (*role == Role::owner && member_id != caller_id)
            fail(Errc::invalid_config, "single-owner model: ownership is not transferable");
        if (existing != repo.config.roster.end() && existing->second.role == Role::owner &&
            *role != Role::owner)
            fail(Errc::cannot_orphan_repo, "cannot demote the sole owner");

        if (existing != repo.config.roster.end()) {
            // keys are immutable once registered
            if (!std::equal(sign_pub.begin(), sign_pub.end(), existing->second.sign_pub.begin(),
                            existing->second.sign_pub.end()) ||
                !std::equal(enc_pub.begin(), enc_pub.end(), existing->second.enc_pub.begin(),
                            existing->second.enc_pub.end()))
                fail(Errc::invalid_config, "member keys cannot change");
        } else {
            if (sign_pub.size() != kPubKeyBytes || enc_pub.size() != kPubKeyBytes)
                fail(Errc::invalid_config, "malformed member keys");
            Hash256 bound = sha256(sign_pub);
            if (bound != member_id)
                fail(Errc::invalid_config, "member id does not bind its signing key");
        }
    }

    RoleChange rc;
    rc.author_id = caller_id;
    rc.member_id = member_id;
    rc.role = role;
    rc.sign_pub.assign(sign_pub.begin(), sign_pub.end());
    rc.enc_pub.assign(enc_pub.begin(), enc_pub.end());

    LedgerEvent ev;
    ev.event_seq = repo.events.size();
    ev.kind = EventKind::role_set;
    ev.timestamp = timestamp;
    ev.repo_id = repo_id;
    ev.payload = encode_role_change(rc);
    persist_and_apply(ev);
}

CommitRecord Ledger::get_head(const Hash256& repo_id) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    if (repo.records.empty()) fail(Errc::commit_not_found, "repo has no commits yet");
    return repo.records.back();
}

std::optional<CommitRecord> Ledger::head_opt(const Hash256& repo_id) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    if (repo.records.empty()) return std::nullopt;
    return repo.records.back();
}

CommitRecord Ledger::get_commit(const Hash256& repo_id, std::uint64_t seq) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    if (seq >= repo.records.size())
        fail_at(Errc::commit_not_found, "no commit at seq " + std::to_string(seq), seq);
    return repo.records[static_cast<std::size_t>(seq)];
}

CommitRecord Ledger::get_by_cid(const Hash256& repo_id, const Cid& cid) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    auto it = repo.by_cid.find(cid);
    if (it == repo.by_cid.end())
        fail(Errc::commit_not_found, "no commit with cid " + cid.hex());
    return repo.records[static_cast<std::size_t>(it->second)];
}

std::vector<LedgerEvent> Ledger::events(const Hash256& repo_id,
                                        std::uint64_t from_event_seq) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    std::vector<LedgerEvent> out;
    for (const LedgerEvent& ev : repo.events)
        if (ev.event_seq >= from_event_seq) out.push_back(ev);
    return out;
}

bool Ledger::repo_exists(const Hash256& repo_id) const {
    std::shared_lock lk(*mu_);
    return repos_.count(repo_id) != 0;
}

RepoConfig Ledger::repo_config(const Hash256& repo_id) const {
    std::shared_lock lk(*mu_);
    return repo_or_throw(repo_id).config;
}

std::optional<Role> Ledger::role_of(const Hash256& repo_id, const Hash256& member_id) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    auto it = repo.config.roster.find(member_id);
    if (it == repo.config.roster.end()) return std::nullopt;
    return it->second.role;
}

std::uint64_t Ledger::checkpoint_interval(const Hash256& repo_id) const {
    std::shared_lock lk(*mu_);
    return repo_or_throw(repo_id).config.checkpoint_interval;
}

std::uint64_t Ledger::segment_start(const Hash256& repo_id, std::uint64_t seq) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);
    if (seq >= repo.records.size())
        fail_at(Errc::commit_not_found, "no commit at seq " + std::to_string(seq), seq);
    auto it = std::upper_bound(repo.genesis_seqs.begin(), repo.genesis_seqs.end(), seq);
    if (it == repo.genesis_seqs.begin()) return 0;
    return *std::prev(it);
}

std::vector<CommitRecord> Ledger::records(const Hash256& repo_id) const {
    std::shared_lock lk(*mu_);
    return repo_or_throw(repo_id).records;
}

std::vector<Hash256> Ledger::repo_ids() const {
    std::shared_lock lk(*mu_);
    std::vector<Hash256> out;
    for (const auto& [id, repo] : repos_) out.push_back(id);
    return out;
}

std::vector<LedgerEvent> Ledger::journal() const {
    std::shared_lock lk(*mu_);
    return journal_;
}

Ledger Ledger::replay(const std::vector<LedgerEvent>& events) {
    Ledger fresh;
    for (const LedgerEvent& ev : events) {
        fresh.apply_event(ev);
        if (ev.kind == EventKind::committed) {
            fresh.file_records_seen_ = fresh.committed_refs_.size();
            fresh.repos_[ev.repo_id].file_record_count = fresh.repos_[ev.repo_id].records.size();
        }
    }
    return fresh;
}

Bytes Ledger::canonical_state() const {
    std::shared_lock lk(*mu_);
    Bytes out(kStateMagic.begin(), kStateMagic.end());
    put_u32be(out, static_cast<std::uint32_t>(repos_.size()));
    for (const auto& [id, repo] : repos_) {
        put_hash(out, id);
        put_u64be(out, repo.created_at);
        put_len_prefixed(out, repo.config.canonical());
        put_u32be(out, static_cast<std::uint32_t>(repo.records.size()));
        for (const CommitRecord& rec : repo.records) put_len_prefixed(out, rec.serialize());
        put_u32be(out, static_cast<std::uint32_t>(repo.events.size()));
        for (const LedgerEvent& ev : repo.events) put_len_prefixed(out, ev.serialize());
    }
    return out;
}

AuditReport Ledger::verify_chain(const Hash256& repo_id, const BlobHashLookup& lookup) const {
    std::shared_lock lk(*mu_);
    const RepoState& repo = repo_or_throw(repo_id);

    AuditReport report;
    report.notes = repo.anomaly_notes;

    // Replay the event stream so each commit is judged against the roster as
    // it stood when the commit was accepted.
    std::map<Hash256, RosterEntry> roster;
    std::uint64_t last_genesis = 0;
    std::size_t position = 0;

    for (const LedgerEvent& ev : repo.events) {
        switch (ev.kind) {
            case EventKind::repo_created: {
                try {
                    roster = RepoConfig::parse(ev.payload).roster;
                } catch (const Error&) {
                    roster.clear();
                }
                break;
            }
            case EventKind::role_set: {
                try {
                    RoleChange rc = *ev.role_change();
                    if (rc.role)
                        roster[rc.member_id] = RosterEntry{*rc.role, rc.sign_pub, rc.enc_pub};
                    else
                        roster.erase(rc.member_id);
                } catch (const Error&) {
                }
                break;
            }
            case EventKind::committed: {
                CommitRecord rec;
                try {
                    rec = CommitRecord::parse(ev.payload);
                } catch (const Error&) {
                    break;  // already noted as anomaly at apply time
                }

                CommitAudit audit;
                audit.seq = rec.seq;

                audit.structure_ok = rec.seq == position && rec.repo_id == repo_id &&
                                     repo.mismatched_file_records.count(rec.seq) == 0;

                if (position == 0) {
                    audit.parent_ok = !rec.parent_cid.has_value();
                } else {
                    const CommitRecord& prev = repo.records[position - 1];
                    audit.parent_ok = rec.parent_cid && *rec.parent_cid == prev.cid;
                }

                auto member = roster.find(rec.author_id);
                audit.author_ok =
                    member != roster.end() && member->second.role != Role::reviewer;

                const Bytes* key = nullptr;
                if (member != roster.end()) {
                    key = &member->second.sign_pub;
                } else if (auto archived = repo.key_archive.find(rec.author_id);
                           archived != repo.key_archive.end()) {
                    key = &archived->second;
                }
                audit.sig_ok =
                    key && verify_sig(rec.canonical_payload(), rec.signature, *key);

                auto stored = lookup ? lookup(rec.cid) : std::nullopt;
                audit.payload_ok = stored && *stored == rec.cid.digest;
                auto stored_dek = lookup ? lookup(rec.dek_file_cid) : std::nullopt;
                audit.dek_file_ok = stored_dek && *stored_dek == rec.dek_file_cid.digest;

                switch (rec.kind) {
                    case CommitKind::genesis:
                        audit.checkpoint_ok = rec.seq == 0;
                        break;
                    case CommitKind::checkpoint_genesis:
                        audit.checkpoint_ok = rec.seq >= 1;
                        break;
                    case CommitKind::patch:
                        audit.checkpoint_ok =
                            rec.seq >= 1 &&
                            rec.seq - last_genesis <= repo.config.checkpoint_interval;
                        break;
                }
                if (rec.is_genesis_kind()) last_genesis = rec.seq;

                report.commits.push_back(audit);
                ++position;
                break;
            }
        }
    }

    report.ok = report.notes.empty();
    for (const CommitAudit& c : report.commits) report.ok = report.ok && c.ok();
    return report;
}

}  // namespace edg
