#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace edg {

enum class Errc {
    // storage
    storage_full,
    io_failure,
    not_found,
    integrity_violation,
    // crypto
    seed_too_short,
    entropy_unavailable,
    nonce_exhaustion,
    authentication_failure,
    duplicate_recipient,
    empty_recipients,
    malformed_dek_file,
    not_a_recipient,
    unwrap_failure,
    // patches
    input_too_large,
    base_length_mismatch,
    malformed_patch,
    // ledger
    invalid_config,
    permission_denied,
    stale_parent,
    bad_signature,
    checkpoint_required,
    malformed_record,
    repo_not_found,
    commit_not_found,
    cannot_orphan_repo,
    member_not_found,
};

const char* errc_name(Errc c);

// Single error type for the whole library. `seq` carries the offending commit
// when a failure surfaces during chain reconstruction or verification.
class Error : public std::runtime_error {
public:
    Error(Errc code, std::string msg)
        : std::runtime_error(std::move(msg)), code_(code) {}
    Error(Errc code, std::string msg, std::uint64_t seq)
        : std::runtime_error(std::move(msg)), code_(code), seq_(seq) {}

    Errc code() const { return code_; }
    const std::optional<std::uint64_t>& seq() const { return seq_; }

private:
    Errc code_;
    std::optional<std::uint64_t> seq_;
};

[[noreturn]] inline void fail(Errc code, std::string msg) {
    throw Error(code, std::move(msg));
}

[[noreturn]] inline void fail_at(Errc code, std::string msg, std::uint64_t seq) {
    throw Error(code, std::move(msg), seq);
}

}  // namespace edg
