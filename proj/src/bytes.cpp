#include "edg/bytes.hpp"

namespace edg {

namespace {
constexpr char kHexDigits[] = "0123456789abcdef";

int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;  // uppercase rejected: canonical form is lowercase
}
}  // namespace

std::string hex_encode(ByteSpan bytes) {
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        out.push_back(kHexDigits[b >> 4]);
        out.push_back(kHexDigits[b & 0x0f]);
    }
    return out;
}

std::optional<Bytes> hex_decode(std::string_view hex) {
    if (hex.size() % 2 != 0) return std::nullopt;
    Bytes out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_nibble(hex[i]);
        int lo = hex_nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    return out;
}

void put_u64be(Bytes& out, std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u32be(Bytes& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint64_t get_u64be(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
    return v;
}

ByteSpan ByteReader::take(std::size_t n) {
    if (n > data_.size() - pos_)
        fail(underflow_errc_, "truncated input: need " + std::to_string(n) +
                                  " bytes, have " + std::to_string(data_.size() - pos_));
    ByteSpan out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

std::uint8_t ByteReader::take_u8() { return take(1)[0]; }

std::uint32_t ByteReader::take_u32be() { return get_u32be(take(4).data()); }

std::uint64_t ByteReader::take_u64be() { return get_u64be(take(8).data()); }

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::storage_full: return "StorageFull";
        case Errc::io_failure: return "IoFailure";
        case Errc::not_found: return "NotFound";
        case Errc::integrity_violation: return "IntegrityViolation";
        case Errc::seed_too_short: return "SeedTooShort";
        case Errc::entropy_unavailable: return "EntropyUnavailable";
        case Errc::nonce_exhaustion: return "NonceExhaustion";
        case Errc::authentication_failure: return "AuthenticationFailure";
        case Errc::duplicate_recipient: return "DuplicateRecipient";
        case Errc::empty_recipients: return "EmptyRecipients";
        case Errc::malformed_dek_file: return "MalformedDekFile";
        case Errc::not_a_recipient: return "NotARecipient";
        case Errc::unwrap_failure: return "UnwrapFailure";
        case Errc::input_too_large: return "InputTooLarge";
        case Errc::base_length_mismatch: return "BaseLengthMismatch";
        case Errc::malformed_patch: return "MalformedPatch";
        case Errc::invalid_config: return "InvalidConfig";
        case Errc::permission_denied: return "PermissionDenied";
        case Errc::stale_parent: return "StaleParent";
        case Errc::bad_signature: return "BadSignature";
        case Errc::checkpoint_required: return "CheckpointRequired";
        case Errc::malformed_record: return "MalformedRecord";
        case Errc::repo_not_found: return "RepoNotFound";
        case Errc::commit_not_found: return "CommitNotFound";
        case Errc::cannot_orphan_repo: return "CannotOrphanRepo";
        case Errc::member_not_found: return "MemberNotFound";
    }
    return "UnknownError";
}

}  // namespace edg
