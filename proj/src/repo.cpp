#include "edg/repo.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "edg/keystore.hpp"
#include "edg/patch.hpp"
#include "fsutil.hpp"

namespace edg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Unpins freshly pinned blobs when a multi-step operation dies part-way, so
// an interrupted commit leaves nothing anchored beyond the old head.
class PinGuard {
public:
    explicit PinGuard(CasStore& cas) : cas_(cas) {}
    ~PinGuard() {
        if (armed_) {
            for (const Cid& cid : pinned_) {
                try {
                    cas_.unpin(cid);
                } catch (const Error&) {
                }
            }
        }
    }

    Cid put_pinned(ByteSpan bytes) {
        Cid cid = cas_.put(bytes);
        bool was_pinned = cas_.pinned(cid);
        cas_.pin(cid);
        if (!was_pinned) pinned_.push_back(cid);
        return cid;
    }

    void disarm() { armed_ = false; }

private:
    CasStore& cas_;
    std::vector<Cid> pinned_;
    bool armed_ = true;
};

fs::path config_path(const fs::path& dir) { return dir / ".edg" / "config"; }

void rethrow_at(const Error& e, std::uint64_t seq) {
    if (e.seq()) throw e;
    throw Error(e.code(), e.what(), seq);
}

}  // namespace

Repository::Repository(fs::path dir, Hash256 repo_id, std::shared_ptr<CasStore> cas,
                       std::shared_ptr<Ledger> ledger, Identity me, std::uint64_t interval)
    : dir_(std::move(dir)),
      repo_id_(repo_id),
      cas_(std::move(cas)),
      ledger_(std::move(ledger)),
      me_(std::move(me)),
      interval_(interval) {}

Repository Repository::init(const fs::path& dir, ByteSpan plain, const Identity& owner,
                            const std::vector<MemberSpec>& members,
                            std::uint64_t checkpoint_interval, std::uint64_t timestamp) {
    if (checkpoint_interval < 1)
        fail(Errc::invalid_config, "checkpoint interval must be at least 1");
    bool owner_listed = false;
    for (const MemberSpec& m : members)
        if (m.id == owner.id() && m.role == Role::owner) owner_listed = true;
    if (!owner_listed) fail(Errc::invalid_config, "owner must appear in the member list");

    std::error_code ec;
    fs::create_directories(dir / ".edg", ec);
    if (ec) fail(Errc::io_failure, "cannot create repository at " + dir.string());

    auto cas = std::make_shared<CasStore>(dir / ".edg" / "cas");
    auto ledger = std::make_shared<Ledger>(dir / ".edg" / "ledger");

    Dek dek = generate_dek();
    SealedBlob sealed = encrypt_blob(plain, dek);

    PinGuard guard(*cas);
    Cid genesis_cid = guard.put_pinned(sealed.serialize());

    std::vector<Recipient> recipients;
    recipients.reserve(members.size());
    for (const MemberSpec& m : members) recipients.push_back(Recipient{m.id, m.enc_pub});
    Bytes dek_file = build_dek_file(dek, genesis_cid.digest, recipients, 1);
    Cid dek_file_cid = guard.put_pinned(dek_file);

    RepoConfig config;
    config.checkpoint_interval = checkpoint_interval;
    for (const MemberSpec& m : members)
        config.roster.emplace(m.id, RosterEntry{m.role, m.sign_pub, m.enc_pub});

    Hash256 repo_id = ledger->create_repo(owner.pub, config, timestamp);

    Repository repo(dir, repo_id, cas, ledger, owner, checkpoint_interval);
    Bytes sig = repo.signed_commit(0, CommitKind::genesis, genesis_cid, std::nullopt,
                                   dek_file_cid, timestamp);
    ledger->commit_data(repo_id, owner.id(), genesis_cid, std::nullopt, dek_file_cid,
                        CommitKind::genesis, timestamp, sig);
    guard.disarm();

    json cfg = {
        {"version", 1},
        {"repo_id", hex_encode(repo_id)},
        {"interval", checkpoint_interval},
        {"cas", ".edg/cas"},
        {"ledger", ".edg/ledger"},
        {"data", "data"},
    };
    std::string text = cfg.dump(2);
    text.push_back('\n');
    fsutil::write_file_atomic(config_path(dir), ByteSpan(
        reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

    repo.segment_ = Segment{0, genesis_cid.digest, dek, dek_file_cid, 1, {}};
    for (const MemberSpec& m : members) repo.segment_->recipients.insert(m.id);
    repo.plain_cache_ = {0, Bytes(plain.begin(), plain.end())};
    repo.write_working_copy(plain);
    return repo;
}

Repository Repository::open(const fs::path& dir, Identity me) {
    bool found = false;
    Bytes raw = fsutil::read_file(config_path(dir), found);
    if (!found) fail(Errc::not_found, "no repository at " + dir.string());
    json cfg = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (cfg.is_discarded()) fail(Errc::io_failure, "repository config is not valid JSON");

    auto repo_hex = cfg.value("repo_id", std::string());
    auto repo_cid = Cid::from_hex(repo_hex);
    if (!repo_cid) fail(Errc::io_failure, "repository config has a malformed repo id");

    fs::path cas_path = dir / cfg.value("cas", std::string(".edg/cas"));
    fs::path ledger_path = dir / cfg.value("ledger", std::string(".edg/ledger"));

    auto cas = std::make_shared<CasStore>(cas_path);
    auto ledger = std::make_shared<Ledger>(ledger_path);
    if (!ledger->repo_exists(repo_cid->digest))
        fail(Errc::repo_not_found, "ledger has no repo " + repo_hex);

    std::uint64_t interval = ledger->checkpoint_interval(repo_cid->digest);
    return Repository(dir, repo_cid->digest, std::move(cas), std::move(ledger), std::move(me),
                      interval);
}

void Repository::refresh() {
    ledger_->refresh();
    auto head = ledger_->head_opt(repo_id_);
    if (plain_cache_ && (!head || head->seq != plain_cache_->first)) plain_cache_.reset();
}

Bytes Repository::signed_commit(std::uint64_t seq, CommitKind kind, const Cid& cid,
                                const std::optional<Cid>& parent, const Cid& dek_file_cid,
                                std::uint64_t timestamp) const {
    CommitRecord rec;
    rec.repo_id = repo_id_;
    rec.seq = seq;
    rec.kind = kind;
    rec.cid = cid;
    rec.parent_cid = parent;
    rec.dek_file_cid = dek_file_cid;
    rec.author_id = me_.id();
    rec.timestamp = timestamp;
    return sign(rec.canonical_payload(), me_);
}

std::vector<Recipient> Repository::roster_recipients() const {
    std::vector<Recipient> out;
    for (const auto& [id, entry] : ledger_->repo_config(repo_id_).roster)
        out.push_back(Recipient{id, entry.enc_pub});
    return out;
}

// Loads (or revalidates) the cached DEK, DEK-file version and recipient set
// for the head commit's segment.
void Repository::ensure_segment(const CommitRecord& head) {
    std::uint64_t genesis_seq = ledger_->segment_start(repo_id_, head.seq);

    if (segment_ && segment_->genesis_seq == genesis_seq) {
        if (segment_->dek_file_cid == head.dek_file_cid) return;
        // same segment, newer DEK file (membership changed through another
        // handle); the DEK itself is unchanged
        DekFile df = DekFile::parse(cas_->get(head.dek_file_cid));
        segment_->dek_file_cid = head.dek_file_cid;
        segment_->dek_file_version = df.version;
        segment_->recipients.clear();
        for (const auto& [id, wrapped] : df.entries) segment_->recipients.insert(id);
        return;
    }

    CommitRecord genesis = ledger_->get_commit(repo_id_, genesis_seq);
    Bytes df_bytes = cas_->get(head.dek_file_cid);
    DekFile df = DekFile::parse(df_bytes);
    if (df.segment_id != genesis.cid.digest)
        fail(Errc::malformed_dek_file, "DEK file is bound to a different segment");

    Segment seg;
    seg.genesis_seq = genesis_seq;
    seg.segment_id = genesis.cid.digest;
    seg.dek = open_dek_file(df_bytes, me_);
    seg.dek_file_cid = head.dek_file_cid;
    seg.dek_file_version = df.version;
    for (const auto& [id, wrapped] : df.entries) seg.recipients.insert(id);
    segment_ = std::move(seg);
}

Bytes Repository::current_plaintext(const CommitRecord& head) {
    if (plain_cache_ && plain_cache_->first == head.seq) return plain_cache_->second;
    Bytes plain = checkout_inner(head.seq);
    plain_cache_ = {head.seq, plain};
    return plain;
}

CommitRecord Repository::commit(ByteSpan new_plain, std::uint64_t timestamp) {
    refresh();
    CommitRecord head = ledger_->get_head(repo_id_);
    ensure_segment(head);

    auto roster = ledger_->repo_config(repo_id_).roster;
    bool revoked_recipient = false;
    for (const Hash256& id : segment_->recipients)
        if (!roster.count(id)) revoked_recipient = true;

    std::uint64_t patches_since = head.seq - segment_->genesis_seq;
    CommitRecord rec;
    if (patches_since < interval_ && !revoked_recipient)
        rec = commit_patch(head, new_plain, timestamp);
    else
        rec = commit_checkpoint(head, new_plain, timestamp);

    plain_cache_ = {rec.seq, Bytes(new_plain.begin(), new_plain.end())};
    write_working_copy(new_plain);
    return rec;
}

CommitRecord Repository::commit_patch(const CommitRecord& head, ByteSpan new_plain,
                                      std::uint64_t timestamp) {
    PinGuard guard(*cas_);

    // Repair path: a member granted through set_role but missing from the
    // DEK file (interrupted grant) gets added with a version bump.
    auto roster = ledger_->repo_config(repo_id_).roster;
    bool missing_member = false;
    for (const auto& [id, entry] : roster)
        if (!segment_->recipients.count(id)) missing_member = true;
    Cid dek_file_cid = segment_->dek_file_cid;
    std::uint64_t dek_file_version = segment_->dek_file_version;
    if (missing_member) {
        dek_file_version += 1;
        Bytes df = build_dek_file(segment_->dek, segment_->segment_id, roster_recipients(),
                                  dek_file_version);
        dek_file_cid = guard.put_pinned(df);
    }

    Bytes current = current_plaintext(head);
    PatchBlob patch = diff(current, new_plain);
    SealedBlob sealed = encrypt_blob(patch.serialize(), segment_->dek, segment_->segment_id);
    Cid blob_cid = guard.put_pinned(sealed.serialize());

    Bytes sig = signed_commit(head.seq + 1, CommitKind::patch, blob_cid, head.cid, dek_file_cid,
                              timestamp);
    std::uint64_t seq = ledger_->commit_data(repo_id_, me_.id(), blob_cid, head.cid,
                                             dek_file_cid, CommitKind::patch, timestamp, sig);
    guard.disarm();

    segment_->dek_file_cid = dek_file_cid;
    segment_->dek_file_version = dek_file_version;
    if (missing_member) {
        segment_->recipients.clear();
        for (const auto& [id, entry] : roster) segment_->recipients.insert(id);
    }
    return ledger_->get_commit(repo_id_, seq);
}

CommitRecord Repository::commit_checkpoint(const CommitRecord& head, ByteSpan new_plain,
                                           std::uint64_t timestamp) {
    PinGuard guard(*cas_);

    Dek dek = generate_dek();
    SealedBlob sealed = encrypt_blob(new_plain, dek);
    Cid blob_cid = guard.put_pinned(sealed.serialize());

    Bytes df = build_dek_file(dek, blob_cid.digest, roster_recipients(), 1);
    Cid dek_file_cid = guard.put_pinned(df);

    Bytes sig = signed_commit(head.seq + 1, CommitKind::checkpoint_genesis, blob_cid, head.cid,
                              dek_file_cid, timestamp);
    std::uint64_t seq =
        ledger_->commit_data(repo_id_, me_.id(), blob_cid, head.cid, dek_file_cid,
                             CommitKind::checkpoint_genesis, timestamp, sig);
    guard.disarm();

    Segment seg;
    seg.genesis_seq = seq;
    seg.segment_id = blob_cid.digest;
    seg.dek = dek;
    seg.dek_file_cid = dek_file_cid;
    seg.dek_file_version = 1;
    for (const auto& [id, entry] : ledger_->repo_config(repo_id_).roster)
        seg.recipients.insert(id);
    segment_ = std::move(seg);
    return ledger_->get_commit(repo_id_, seq);
}

// Opens the segment DEK by trying every DEK file referenced inside the
// segment, newest first: a member granted mid-segment appears only in later
// versions, a lazily revoked member only in earlier ones.
Dek Repository::open_segment_dek(std::uint64_t genesis_seq, std::uint64_t segment_end,
                                 Hash256* segment_id_out) {
    std::vector<Cid> candidates;
    for (std::uint64_t s = genesis_seq; s <= segment_end; ++s) {
        Cid cid = ledger_->get_commit(repo_id_, s).dek_file_cid;
        if (std::find(candidates.begin(), candidates.end(), cid) == candidates.end())
            candidates.push_back(cid);
    }
    if (segment_id_out)
        *segment_id_out = ledger_->get_commit(repo_id_, genesis_seq).cid.digest;

    bool any_found = false;
    for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
        Bytes df_bytes;
        try {
            df_bytes = cas_->get(*it);
        } catch (const Error& e) {
            if (e.code() == Errc::not_found) continue;  // released by gc policy
            throw;
        }
        any_found = true;
        try {
            return open_dek_file(df_bytes, me_);
        } catch (const Error& e) {
            if (e.code() != Errc::not_a_recipient) throw;
        }
    }
    if (!any_found)
        fail_at(Errc::not_found, "no DEK file blob available for segment", genesis_seq);
    fail(Errc::not_a_recipient,
         "identity " + hex_encode(me_.id()) + " holds no DEK for this segment");
}

Bytes Repository::checkout(std::uint64_t seq) {
    refresh();
    Bytes plain = checkout_inner(seq);
    auto head = ledger_->head_opt(repo_id_);
    if (head && head->seq == seq) plain_cache_ = {seq, plain};
    return plain;
}

Bytes Repository::checkout_inner(std::uint64_t seq) {
    CommitRecord target = ledger_->get_commit(repo_id_, seq);
    std::uint64_t genesis_seq = ledger_->segment_start(repo_id_, seq);

    // Access is per segment: consider DEK files up to the segment's end, not
    // just up to `seq`, so later grants open earlier commits too.
    CommitRecord head = ledger_->get_head(repo_id_);
    std::uint64_t segment_end = head.seq;
    for (std::uint64_t s = seq + 1; s <= head.seq; ++s) {
        if (ledger_->get_commit(repo_id_, s).is_genesis_kind()) {
            segment_end = s - 1;
            break;
        }
    }

    Hash256 segment_id{};
    Dek dek = open_segment_dek(genesis_seq, segment_end, &segment_id);

    Bytes plain;
    for (std::uint64_t s = genesis_seq; s <= seq; ++s) {
        CommitRecord rec = ledger_->get_commit(repo_id_, s);
        try {
            Bytes blob = cas_->get(rec.cid);
            SealedBlob sealed = SealedBlob::parse(blob);
            if (s == genesis_seq) {
                plain = decrypt_blob(sealed, dek);
            } else {
                Bytes patch_bytes = decrypt_blob(sealed, dek, segment_id);
                PatchBlob patch = parse_patch(patch_bytes);
                plain = edg::apply(plain, patch);
            }
        } catch (const Error& e) {
            rethrow_at(e, s);
        }
    }
    return plain;
}

void Repository::grant(const MemberSpec& member, std::uint64_t timestamp) {
    refresh();
    ledger_->set_role(repo_id_, me_.id(), member.id, member.role, member.sign_pub,
                      member.enc_pub, timestamp);
    // Publish the rebuilt DEK file on-chain right away via an identity patch
    // (or a checkpoint when one is due); commit_patch picks up the roster
    // delta and bumps the DEK file version.
    CommitRecord head = ledger_->get_head(repo_id_);
    commit(current_plaintext(head), timestamp);
}

void Repository::revoke(const Hash256& member_id, std::uint64_t timestamp) {
    refresh();
    ledger_->set_role(repo_id_, me_.id(), member_id, std::nullopt, {}, {}, timestamp);
    // Lazy re-key: the next commit is forced onto the checkpoint path, whose
    // fresh DEK file excludes the member. Earlier segments stay readable to
    // them.
}

std::vector<LogEntry> Repository::log() const {
    std::vector<LogEntry> out;
    for (const CommitRecord& rec : ledger_->records(repo_id_))
        out.push_back(LogEntry{rec.seq, rec.kind, rec.cid, rec.author_id, rec.timestamp});
    return out;
}

RepoAudit Repository::verify() {
    refresh();
    RepoAudit audit;
    audit.chain = ledger_->verify_chain(
        repo_id_, [this](const Cid& cid) { return cas_->stored_hash(cid); });

    auto head = ledger_->head_opt(repo_id_);
    if (head) {
        try {
            checkout_inner(head->seq);
        } catch (const Error& e) {
            audit.reconstruction_ok = false;
            audit.failing_seq = e.seq();
        }
    }
    if (!audit.failing_seq) audit.failing_seq = audit.chain.first_bad_seq();
    return audit;
}

std::vector<Cid> Repository::gc(const GcOptions& opts) {
    refresh();
    std::set<Cid> referenced;
    for (const Hash256& repo_id : ledger_->repo_ids()) {
        std::vector<CommitRecord> records = ledger_->records(repo_id);
        std::uint64_t last_genesis = 0;
        for (const CommitRecord& rec : records)
            if (rec.is_genesis_kind()) last_genesis = rec.seq;
        for (const CommitRecord& rec : records) {
            referenced.insert(rec.dek_file_cid);
            if (!opts.keep_history && rec.kind == CommitKind::patch && rec.seq < last_genesis)
                continue;  // closed-segment patch: release
            referenced.insert(rec.cid);
        }
    }

    for (const BlobInfo& info : cas_->list())
        if (info.pinned && !referenced.count(info.cid)) cas_->unpin(info.cid);

    return cas_->gc(referenced);
}

void Repository::write_working_copy(ByteSpan plain) const {
    fsutil::write_file_atomic(dir_ / "data", plain);
}

}  // namespace edg
