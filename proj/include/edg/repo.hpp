#pragma once

// End-to-end client workflows: repository creation, patch/checkpoint commits
// with the segment DEK, historical checkout by walking the chain back to the
// segment genesis, membership changes with DEK-file rotation, audit, and
// ledger-rooted garbage collection.
//
// Working directory layout:
//   <dir>/.edg/config     repo id, checkpoint interval, store/ledger paths
//   <dir>/.edg/keystore/  identity files (see keystore.hpp)
//   <dir>/.edg/cas/       content-addressed store (default location)
//   <dir>/.edg/ledger/    ledger files (default location)
//   <dir>/data            current plaintext working copy

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "edg/cas.hpp"
#include "edg/crypto.hpp"
#include "edg/ledger.hpp"

namespace edg {

struct MemberSpec {
    Hash256 id{};
    Role role = Role::reviewer;
    Bytes sign_pub;
    Bytes enc_pub;

    static MemberSpec make(const PublicIdentity& pub, Role role) {
        return MemberSpec{pub.id, role, pub.sign_pub, pub.enc_pub};
    }
};

struct LogEntry {
    std::uint64_t seq = 0;
    CommitKind kind = CommitKind::genesis;
    Cid cid;
    Hash256 author_id{};
    std::uint64_t timestamp = 0;
};

struct RepoAudit {
    AuditReport chain;
    bool reconstruction_ok = true;
    std::optional<std::uint64_t> failing_seq;

    bool ok() const { return chain.ok && reconstruction_ok; }
};

struct GcOptions {
    // Keep every ledger-referenced blob pinned. When false, patch blobs of
    // closed segments are released; genesis-kind payloads and DEK files
    // always stay.
    bool keep_history = true;
};

class Repository {
public:
    static Repository init(const std::filesystem::path& dir, ByteSpan plain,
                           const Identity& owner, const std::vector<MemberSpec>& members,
                           std::uint64_t checkpoint_interval, std::uint64_t timestamp);
    static Repository open(const std::filesystem::path& dir, Identity me);

    CommitRecord commit(ByteSpan new_plain, std::uint64_t timestamp);
    Bytes checkout(std::uint64_t seq);
    void grant(const MemberSpec& member, std::uint64_t timestamp);
    void revoke(const Hash256& member_id, std::uint64_t timestamp);

    std::vector<LogEntry> log() const;
    RepoAudit verify();
    std::vector<Cid> gc(const GcOptions& opts = {});

    // Picks up commits and roster changes made through other handles.
    void refresh();

    const Hash256& repo_id() const { return repo_id_; }
    CommitRecord head() const { return ledger_->get_head(repo_id_); }
    std::uint64_t checkpoint_interval() const { return interval_; }
    CasStore& cas() { return *cas_; }
    Ledger& ledger() { return *ledger_; }
    const Identity& identity() const { return me_; }
    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path working_copy_path() const { return dir_ / "data"; }
    std::filesystem::path keystore_path() const { return dir_ / ".edg" / "keystore"; }

private:
    Repository(std::filesystem::path dir, Hash256 repo_id, std::shared_ptr<CasStore> cas,
               std::shared_ptr<Ledger> ledger, Identity me, std::uint64_t interval);

    // Segment state cached from the head commit's DEK file.
    struct Segment {
        std::uint64_t genesis_seq = 0;
        Hash256 segment_id{};
        Dek dek;
        Cid dek_file_cid;
        std::uint64_t dek_file_version = 1;
        std::set<Hash256> recipients;
    };

    void ensure_segment(const CommitRecord& head);
    Bytes current_plaintext(const CommitRecord& head);
    Bytes checkout_inner(std::uint64_t seq);
    Dek open_segment_dek(std::uint64_t genesis_seq, std::uint64_t segment_end,
                         Hash256* segment_id_out);
    CommitRecord commit_patch(const CommitRecord& head, ByteSpan new_plain,
                              std::uint64_t timestamp);
    CommitRecord commit_checkpoint(const CommitRecord& head, ByteSpan new_plain,
                                   std::uint64_t timestamp);
    std::vector<Recipient> roster_recipients() const;
    Bytes signed_commit(std::uint64_t seq, CommitKind kind, const Cid& cid,
                        const std::optional<Cid>& parent, const Cid& dek_file_cid,
                        std::uint64_t timestamp) const;
    void write_working_copy(ByteSpan plain) const;

    std::filesystem::path dir_;
    Hash256 repo_id_{};
    std::shared_ptr<CasStore> cas_;
    std::shared_ptr<Ledger> ledger_;
    Identity me_;
    std::uint64_t interval_ = 16;
    std::optional<Segment> segment_;
    std::optional<std::pair<std::uint64_t, Bytes>> plain_cache_;  // seq -> plaintext
};

}  // namespace edg
