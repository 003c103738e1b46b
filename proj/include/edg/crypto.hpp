#pragma once

// Client-side cryptography: identities, segment data-encryption keys,
// authenticated blob encryption, per-recipient key wrapping into DEK files,
// and commit signatures.
//
// Primitive profile (all via OpenSSL):
//   - hashing: SHA-256
//   - blob encryption: AES-256-GCM, 12-byte nonce, 16-byte tag
//   - key wrapping: ECIES over secp256k1 (ephemeral ECDH + HKDF-SHA256 +
//     AES-256-GCM), one wrapped copy per recipient
//   - signatures: ECDSA/secp256k1 over SHA-256 of a canonical payload
//
// Nonce policy: 12 bytes = 4-byte random process prefix || 8-byte counter.
// Unique per process lifetime; the counter overflowing raises NonceExhaustion.

#include <cstdint>
#include <map>
#include <optional>

#include "edg/bytes.hpp"
#include "edg/errors.hpp"

namespace edg {

constexpr std::size_t kDekBytes = 32;
constexpr std::size_t kNonceBytes = 12;
constexpr std::size_t kTagBytes = 16;
constexpr std::size_t kIdBytes = 32;
constexpr std::size_t kPubKeyBytes = 33;   // compressed SEC1 point
constexpr std::size_t kPrivKeyBytes = 32;
constexpr std::size_t kMinSeedBytes = 32;

Hash256 sha256(ByteSpan data);

// 256-bit segment data-encryption key. Lives only in process memory; zeroed
// on destruction.
struct Dek {
    std::array<std::uint8_t, kDekBytes> key{};

    Dek() = default;
    ~Dek();
    Dek(const Dek&) = default;
    Dek& operator=(const Dek&) = default;

    bool operator==(const Dek& o) const { return key == o.key; }
};

// Public half of an identity: stable id plus both public keys.
struct PublicIdentity {
    Hash256 id{};       // SHA-256 of the compressed signing public key
    Bytes sign_pub;     // 33 bytes
    Bytes enc_pub;      // 33 bytes

    bool operator==(const PublicIdentity& o) const = default;
};

// Full identity with private key material. Private halves never appear in any
// protocol message; only the keystore persists them (encrypted).
struct Identity {
    PublicIdentity pub;
    std::array<std::uint8_t, kPrivKeyBytes> sign_priv{};
    std::array<std::uint8_t, kPrivKeyBytes> enc_priv{};

    ~Identity();
    Identity() = default;
    Identity(const Identity&) = default;
    Identity& operator=(const Identity&) = default;

    const Hash256& id() const { return pub.id; }
};

// Fresh identity from the CSPRNG, or deterministically from a seed of at
// least 32 bytes (test use).
Identity keygen(std::optional<ByteSpan> seed = std::nullopt);

Dek generate_dek();

// AES-256-GCM envelope. Decryption fails closed on any altered field.
struct SealedBlob {
    std::array<std::uint8_t, kNonceBytes> nonce{};
    Bytes ciphertext;
    std::array<std::uint8_t, kTagBytes> tag{};

    Bytes serialize() const;  // nonce || ciphertext || tag
    static SealedBlob parse(ByteSpan bytes);

    bool operator==(const SealedBlob& o) const = default;
};

// aad binds a ciphertext to its segment (segment id for patch blobs, empty
// for genesis blobs whose cid *defines* the segment).
SealedBlob encrypt_blob(ByteSpan plain, const Dek& dek, ByteSpan aad = {});
Bytes decrypt_blob(const SealedBlob& sealed, const Dek& dek, ByteSpan aad = {});

// Deterministic AES-256-GCM with an explicit nonce. encrypt_blob is this plus
// the process nonce sequence; exposed separately so known-answer vectors can
// pin the primitive.
SealedBlob gcm_seal(const std::array<std::uint8_t, kDekBytes>& key,
                    const std::array<std::uint8_t, kNonceBytes>& nonce,
                    ByteSpan plain, ByteSpan aad);
Bytes gcm_open(const std::array<std::uint8_t, kDekBytes>& key, const SealedBlob& sealed,
               ByteSpan aad);

// Versioned map from recipient id to that recipient's wrapped copy of one
// segment DEK.
//
// Canonical bytes: "EDGK1" || segment_id (32) || version (8 BE) ||
// entry_count (4 BE) || entries sorted ascending by recipient id, each
// recipient_id (32) || wrapped_len (4 BE) || wrapped bytes. Any deviation
// (bad magic, unsorted, duplicate ids, trailing bytes, zero entries) is
// MalformedDekFile.
struct DekFile {
    Hash256 segment_id{};
    std::uint64_t version = 0;
    std::map<Hash256, Bytes> entries;

    Bytes serialize() const;
    static DekFile parse(ByteSpan bytes);

    bool has_recipient(const Hash256& id) const { return entries.count(id) != 0; }

    bool operator==(const DekFile& o) const = default;
};

struct Recipient {
    Hash256 id{};
    Bytes enc_pub;
};

Bytes build_dek_file(const Dek& dek, const Hash256& segment_id,
                     const std::vector<Recipient>& recipients, std::uint64_t version);

// Returns the segment DEK iff `me` has an entry that unwraps under its
// encryption key.
Dek open_dek_file(ByteSpan dek_file_bytes, const Identity& me);

// ECIES wrap of a 32-byte DEK for one recipient:
//   ephemeral_pub (33) || nonce (12) || ciphertext (32) || tag (16)
// KEK = HKDF-SHA256(ECDH x-coord, info = "edg-wrap-v1" || ephemeral_pub ||
// recipient_pub); the recipient id is authenticated data.
Bytes wrap_dek(const Dek& dek, const Hash256& recipient_id, ByteSpan recipient_enc_pub);
Dek unwrap_dek(ByteSpan wrapped, const Identity& me);

// ECDSA/secp256k1, DER-encoded. verify_sig never throws; malformed input is
// simply false.
Bytes sign(ByteSpan payload, const Identity& me);
bool verify_sig(ByteSpan payload, ByteSpan signature, ByteSpan signer_pub);

}  // namespace edg
