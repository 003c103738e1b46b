#include "edg/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/kdf.h>
#include <openssl/obj_mac.h>
#include <openssl/param_build.h>
#include <openssl/rand.h>

#include <atomic>
#include <cstring>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace edg {

namespace {

constexpr const char* kCurveName = "secp256k1";
constexpr std::string_view kWrapInfo = "edg-wrap-v1";
constexpr std::string_view kKeygenSignInfo = "edg-keygen-sign-v1";
constexpr std::string_view kKeygenEncInfo = "edg-keygen-enc-v1";

struct PkeyDel { void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); } };
struct PkeyCtxDel { void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); } };
struct MdCtxDel { void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); } };
struct CipherCtxDel { void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); } };
struct BnDel { void operator()(BIGNUM* p) const { BN_clear_free(p); } };
struct EcGroupDel { void operator()(EC_GROUP* p) const { EC_GROUP_free(p); } };
struct EcPointDel { void operator()(EC_POINT* p) const { EC_POINT_free(p); } };
struct ParamBldDel { void operator()(OSSL_PARAM_BLD* p) const { OSSL_PARAM_BLD_free(p); } };
struct ParamDel { void operator()(OSSL_PARAM* p) const { OSSL_PARAM_free(p); } };

using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDel>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDel>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDel>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDel>;
using BnPtr = std::unique_ptr<BIGNUM, BnDel>;
using EcGroupPtr = std::unique_ptr<EC_GROUP, EcGroupDel>;
using EcPointPtr = std::unique_ptr<EC_POINT, EcPointDel>;

[[noreturn]] void ssl_bug(const char* what) {
    ERR_clear_error();
    throw std::runtime_error(std::string("openssl failure in ") + what);
}

const EC_GROUP* curve_group() {
    static EC_GROUP* group = [] {
        EC_GROUP* g = EC_GROUP_new_by_curve_name(NID_secp256k1);
        if (!g) ssl_bug("EC_GROUP_new_by_curve_name");
        return g;
    }();
    return group;
}

bool scalar_in_range(const BIGNUM* bn) {
    if (BN_is_zero(bn) || BN_is_negative(bn)) return false;
    const BIGNUM* order = EC_GROUP_get0_order(curve_group());
    return BN_cmp(bn, order) < 0;
}

// pub = priv * G, compressed SEC1.
Bytes public_from_private(const std::array<std::uint8_t, kPrivKeyBytes>& priv) {
    BnPtr bn(BN_bin2bn(priv.data(), static_cast<int>(priv.size()), nullptr));
    if (!bn) ssl_bug("BN_bin2bn");
    EcPointPtr point(EC_POINT_new(curve_group()));
    if (!point) ssl_bug("EC_POINT_new");
    if (EC_POINT_mul(curve_group(), point.get(), bn.get(), nullptr, nullptr, nullptr) != 1)
        ssl_bug("EC_POINT_mul");
    Bytes out(kPubKeyBytes);
    std::size_t n = EC_POINT_point2oct(curve_group(), point.get(), POINT_CONVERSION_COMPRESSED,
                                       out.data(), out.size(), nullptr);
    if (n != kPubKeyBytes) ssl_bug("EC_POINT_point2oct");
    return out;
}

PkeyPtr pkey_from_parts(const std::uint8_t* priv, ByteSpan pub) {
    std::unique_ptr<OSSL_PARAM_BLD, ParamBldDel> bld(OSSL_PARAM_BLD_new());
    if (!bld) ssl_bug("OSSL_PARAM_BLD_new");
    BnPtr bn;
    if (!OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME, kCurveName, 0))
        ssl_bug("param group");
    if (priv) {
        bn.reset(BN_bin2bn(priv, static_cast<int>(kPrivKeyBytes), nullptr));
        if (!bn || !OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_PRIV_KEY, bn.get()))
            ssl_bug("param priv");
    }
    if (!OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY, pub.data(),
                                          pub.size()))
        ssl_bug("param pub");
    std::unique_ptr<OSSL_PARAM, ParamDel> params(OSSL_PARAM_BLD_to_param(bld.get()));
    if (!params) ssl_bug("OSSL_PARAM_BLD_to_param");

    PkeyCtxPtr ctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
    if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) != 1) ssl_bug("EVP_PKEY_fromdata_init");
    EVP_PKEY* raw = nullptr;
    int selection = priv ? EVP_PKEY_KEYPAIR : EVP_PKEY_PUBLIC_KEY;
    if (EVP_PKEY_fromdata(ctx.get(), &raw, selection, params.get()) != 1 || !raw)
        ssl_bug("EVP_PKEY_fromdata");
    return PkeyPtr(raw);
}

PkeyPtr private_pkey(const std::array<std::uint8_t, kPrivKeyBytes>& priv, ByteSpan pub) {
    return pkey_from_parts(priv.data(), pub);
}

// Returns nullptr (rather than throwing) on an invalid encoded point so
// verify paths can fail soft.
PkeyPtr public_pkey(ByteSpan pub) {
    if (pub.size() != kPubKeyBytes) return nullptr;
    // Validate the encoding before handing it to fromdata; an off-curve or
    // garbage point must not abort the process.
    EcPointPtr point(EC_POINT_new(curve_group()));
    if (!point) ssl_bug("EC_POINT_new");
    if (EC_POINT_oct2point(curve_group(), point.get(), pub.data(), pub.size(), nullptr) != 1) {
        ERR_clear_error();
        return nullptr;
    }
    return pkey_from_parts(nullptr, pub);
}

Bytes hkdf_sha256(ByteSpan ikm, ByteSpan info, std::size_t out_len) {
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1) ssl_bug("hkdf init");
    if (EVP_PKEY_CTX_set_hkdf_md(ctx.get(), EVP_sha256()) != 1 ||
        EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.data(), static_cast<int>(ikm.size())) != 1 ||
        EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), info.data(), static_cast<int>(info.size())) != 1)
        ssl_bug("hkdf params");
    Bytes out(out_len);
    std::size_t n = out_len;
    if (EVP_PKEY_derive(ctx.get(), out.data(), &n) != 1 || n != out_len) ssl_bug("hkdf derive");
    return out;
}

std::array<std::uint8_t, 32> ecdh_x(const std::array<std::uint8_t, kPrivKeyBytes>& my_priv,
                                    ByteSpan my_pub, ByteSpan peer_pub) {
    PkeyPtr mine = private_pkey(my_priv, my_pub);
    PkeyPtr peer = public_pkey(peer_pub);
    if (!peer) fail(Errc::unwrap_failure, "invalid peer public key");
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new(mine.get(), nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1)
        ssl_bug("ecdh init");
    std::array<std::uint8_t, 32> out{};
    std::size_t n = out.size();
    if (EVP_PKEY_derive(ctx.get(), out.data(), &n) != 1 || n != out.size())
        ssl_bug("ecdh derive");
    return out;
}

void random_bytes(std::uint8_t* out, std::size_t n) {
    if (RAND_bytes(out, static_cast<int>(n)) != 1)
        fail(Errc::entropy_unavailable, "system CSPRNG unavailable");
}

std::array<std::uint8_t, kNonceBytes> next_nonce() {
    static std::array<std::uint8_t, 4> prefix = [] {
        std::array<std::uint8_t, 4> p{};
        random_bytes(p.data(), p.size());
        return p;
    }();
    static std::atomic<std::uint64_t> counter{0};

    std::uint64_t n = counter.fetch_add(1, std::memory_order_relaxed);
    if (n == UINT64_MAX) fail(Errc::nonce_exhaustion, "per-process nonce counter exhausted");
    std::array<std::uint8_t, kNonceBytes> nonce{};
    std::memcpy(nonce.data(), prefix.data(), 4);
    for (int i = 0; i < 8; ++i)
        nonce[4 + i] = static_cast<std::uint8_t>(n >> (56 - 8 * i));
    return nonce;
}

std::array<std::uint8_t, kPrivKeyBytes> derive_scalar(ByteSpan master, std::string_view label) {
    for (std::uint8_t ctr = 0;; ++ctr) {
        Bytes info(label.begin(), label.end());
        info.push_back(ctr);
        Bytes cand = hkdf_sha256(master, info, kPrivKeyBytes);
        BnPtr bn(BN_bin2bn(cand.data(), static_cast<int>(cand.size()), nullptr));
        if (bn && scalar_in_range(bn.get())) {
            std::array<std::uint8_t, kPrivKeyBytes> out{};
            std::memcpy(out.data(), cand.data(), kPrivKeyBytes);
            OPENSSL_cleanse(cand.data(), cand.size());
            return out;
        }
        if (ctr == 255) ssl_bug("derive_scalar: no valid scalar in 256 draws");
    }
}

}  // namespace

Hash256 sha256(ByteSpan data) {
    Hash256 out{};
    unsigned int n = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &n, EVP_sha256(), nullptr) != 1 ||
        n != out.size())
        ssl_bug("EVP_Digest sha256");
    return out;
}

Dek::~Dek() { OPENSSL_cleanse(key.data(), key.size()); }

Identity::~Identity() {
    OPENSSL_cleanse(sign_priv.data(), sign_priv.size());
    OPENSSL_cleanse(enc_priv.data(), enc_priv.size());
}

Identity keygen(std::optional<ByteSpan> seed) {
    Bytes master;
    if (seed) {
        if (seed->size() < kMinSeedBytes)
            fail(Errc::seed_too_short, "keygen seed must be at least 32 bytes");
        master.assign(seed->begin(), seed->end());
    } else {
        master.resize(64);
        random_bytes(master.data(), master.size());
    }

    Identity id;
    id.sign_priv = derive_scalar(master, kKeygenSignInfo);
    id.enc_priv = derive_scalar(master, kKeygenEncInfo);
    id.pub.sign_pub = public_from_private(id.sign_priv);
    id.pub.enc_pub = public_from_private(id.enc_priv);
    id.pub.id = sha256(id.pub.sign_pub);
    OPENSSL_cleanse(master.data(), master.size());
    return id;
}

Dek generate_dek() {
    Dek dek;
    random_bytes(dek.key.data(), dek.key.size());
    return dek;
}

Bytes SealedBlob::serialize() const {
    Bytes out;
    out.reserve(kNonceBytes + ciphertext.size() + kTagBytes);
    out.insert(out.end(), nonce.begin(), nonce.end());
    out.insert(out.end(), ciphertext.begin(), ciphertext.end());
    out.insert(out.end(), tag.begin(), tag.end());
    return out;
}

SealedBlob SealedBlob::parse(ByteSpan bytes) {
    if (bytes.size() < kNonceBytes + kTagBytes)
        fail(Errc::authentication_failure, "sealed blob truncated");
    SealedBlob s;
    std::memcpy(s.nonce.data(), bytes.data(), kNonceBytes);
    s.ciphertext.assign(bytes.begin() + kNonceBytes, bytes.end() - kTagBytes);
    std::memcpy(s.tag.data(), bytes.data() + bytes.size() - kTagBytes, kTagBytes);
    return s;
}

SealedBlob gcm_seal(const std::array<std::uint8_t, kDekBytes>& key,
                    const std::array<std::uint8_t, kNonceBytes>& nonce, ByteSpan plain,
                    ByteSpan aad) {
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(),
                                   nonce.data()) != 1)
        ssl_bug("gcm encrypt init");

    int len = 0;
    if (!aad.empty() &&
        EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
        ssl_bug("gcm aad");

    SealedBlob out;
    out.nonce = nonce;
    out.ciphertext.resize(plain.size());
    if (!plain.empty() &&
        EVP_EncryptUpdate(ctx.get(), out.ciphertext.data(), &len, plain.data(),
                          static_cast<int>(plain.size())) != 1)
        ssl_bug("gcm encrypt");
    if (EVP_EncryptFinal_ex(ctx.get(), out.ciphertext.data() + out.ciphertext.size(), &len) != 1)
        ssl_bug("gcm encrypt final");
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes, out.tag.data()) != 1)
        ssl_bug("gcm get tag");
    return out;
}

Bytes gcm_open(const std::array<std::uint8_t, kDekBytes>& key, const SealedBlob& sealed,
               ByteSpan aad) {
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(),
                                   sealed.nonce.data()) != 1)
        ssl_bug("gcm decrypt init");

    int len = 0;
    if (!aad.empty() &&
        EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
        ssl_bug("gcm aad");

    Bytes plain(sealed.ciphertext.size());
    if (!sealed.ciphertext.empty() &&
        EVP_DecryptUpdate(ctx.get(), plain.data(), &len, sealed.ciphertext.data(),
                          static_cast<int>(sealed.ciphertext.size())) != 1)
        ssl_bug("gcm decrypt");

    std::array<std::uint8_t, kTagBytes> tag = sealed.tag;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) != 1)
        ssl_bug("gcm set tag");
    if (EVP_DecryptFinal_ex(ctx.get(), plain.data() + plain.size(), &len) != 1) {
        ERR_clear_error();
        fail(Errc::authentication_failure, "ciphertext authentication failed");
    }
    return plain;
}

SealedBlob encrypt_blob(ByteSpan plain, const Dek& dek, ByteSpan aad) {
    return gcm_seal(dek.key, next_nonce(), plain, aad);
}

Bytes decrypt_blob(const SealedBlob& sealed, const Dek& dek, ByteSpan aad) {
    return gcm_open(dek.key, sealed, aad);
}

Bytes wrap_dek(const Dek& dek, const Hash256& recipient_id, ByteSpan recipient_enc_pub) {
    Identity ephemeral = keygen();
    auto shared = ecdh_x(ephemeral.enc_priv, ephemeral.pub.enc_pub, recipient_enc_pub);

    Bytes info(kWrapInfo.begin(), kWrapInfo.end());
    info.insert(info.end(), ephemeral.pub.enc_pub.begin(), ephemeral.pub.enc_pub.end());
    info.insert(info.end(), recipient_enc_pub.begin(), recipient_enc_pub.end());
    Bytes kek_bytes = hkdf_sha256(shared, info, kDekBytes);
    std::array<std::uint8_t, kDekBytes> kek{};
    std::memcpy(kek.data(), kek_bytes.data(), kDekBytes);

    std::array<std::uint8_t, kNonceBytes> nonce{};
    random_bytes(nonce.data(), nonce.size());
    SealedBlob sealed = gcm_seal(kek, nonce, dek.key, recipient_id);

    Bytes out = ephemeral.pub.enc_pub;
    Bytes body = sealed.serialize();
    out.insert(out.end(), body.begin(), body.end());
    OPENSSL_cleanse(kek.data(), kek.size());
    OPENSSL_cleanse(shared.data(), shared.size());
    OPENSSL_cleanse(kek_bytes.data(), kek_bytes.size());
    return out;
}

Dek unwrap_dek(ByteSpan wrapped, const Identity& me) {
    constexpr std::size_t kWrappedBytes =
        kPubKeyBytes + kNonceBytes + kDekBytes + kTagBytes;
    if (wrapped.size() != kWrappedBytes)
        fail(Errc::unwrap_failure, "wrapped DEK entry has wrong length");

    ByteSpan eph_pub = wrapped.first(kPubKeyBytes);
    try {
        auto shared = ecdh_x(me.enc_priv, me.pub.enc_pub, eph_pub);
        Bytes info(kWrapInfo.begin(), kWrapInfo.end());
        info.insert(info.end(), eph_pub.begin(), eph_pub.end());
        info.insert(info.end(), me.pub.enc_pub.begin(), me.pub.enc_pub.end());
        Bytes kek_bytes = hkdf_sha256(shared, info, kDekBytes);
        std::array<std::uint8_t, kDekBytes> kek{};
        std::memcpy(kek.data(), kek_bytes.data(), kDekBytes);

        SealedBlob sealed = SealedBlob::parse(wrapped.subspan(kPubKeyBytes));
        Bytes plain = gcm_open(kek, sealed, me.pub.id);
        OPENSSL_cleanse(kek.data(), kek.size());
        OPENSSL_cleanse(shared.data(), shared.size());
        OPENSSL_cleanse(kek_bytes.data(), kek_bytes.size());
        if (plain.size() != kDekBytes)
            fail(Errc::unwrap_failure, "unwrapped key has wrong length");
        Dek dek;
        std::memcpy(dek.key.data(), plain.data(), kDekBytes);
        OPENSSL_cleanse(plain.data(), plain.size());
        return dek;
    } catch (const Error& e) {
        if (e.code() == Errc::unwrap_failure) throw;
        fail(Errc::unwrap_failure, std::string("DEK unwrap failed: ") + e.what());
    }
}

namespace {
constexpr std::string_view kDekFileMagic = "EDGK1";
}

Bytes DekFile::serialize() const {
    Bytes out(kDekFileMagic.begin(), kDekFileMagic.end());
    out.insert(out.end(), segment_id.begin(), segment_id.end());
    put_u64be(out, version);
    put_u32be(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [id, wrapped] : entries) {  // std::map iterates ascending
        out.insert(out.end(), id.begin(), id.end());
        put_u32be(out, static_cast<std::uint32_t>(wrapped.size()));
        out.insert(out.end(), wrapped.begin(), wrapped.end());
    }
    return out;
}

DekFile DekFile::parse(ByteSpan bytes) {
    ByteReader r(bytes, Errc::malformed_dek_file);
    ByteSpan magic = r.take(kDekFileMagic.size());
    if (!std::equal(magic.begin(), magic.end(), kDekFileMagic.begin(), kDekFileMagic.end()))
        fail(Errc::malformed_dek_file, "bad DEK file magic");

    DekFile f;
    ByteSpan seg = r.take(kIdBytes);
    std::copy(seg.begin(), seg.end(), f.segment_id.begin());
    f.version = r.take_u64be();
    std::uint32_t count = r.take_u32be();
    if (count == 0) fail(Errc::malformed_dek_file, "DEK file has no entries");

    const Hash256* prev = nullptr;
    for (std::uint32_t i = 0; i < count; ++i) {
        Hash256 id{};
        ByteSpan id_span = r.take(kIdBytes);
        std::copy(id_span.begin(), id_span.end(), id.begin());
        std::uint32_t wlen = r.take_u32be();
        ByteSpan wrapped = r.take(wlen);
        auto [it, inserted] = f.entries.emplace(id, Bytes(wrapped.begin(), wrapped.end()));
        if (!inserted || (prev && !(*prev < it->first)))
            fail(Errc::malformed_dek_file, "DEK file entries not strictly ascending");
        prev = &it->first;
    }
    if (!r.done()) fail(Errc::malformed_dek_file, "trailing bytes after DEK file entries");
    return f;
}

Bytes build_dek_file(const Dek& dek, const Hash256& segment_id,
                     const std::vector<Recipient>& recipients, std::uint64_t version) {
    if (recipients.empty()) fail(Errc::empty_recipients, "DEK file needs at least one recipient");
    DekFile f;
    f.segment_id = segment_id;
    f.version = version;
    for (const auto& rcpt : recipients) {
        if (f.entries.count(rcpt.id))
            fail(Errc::duplicate_recipient, "recipient listed twice: " + hex_encode(rcpt.id));
        f.entries.emplace(rcpt.id, wrap_dek(dek, rcpt.id, rcpt.enc_pub));
    }
    return f.serialize();
}

Dek open_dek_file(ByteSpan dek_file_bytes, const Identity& me) {
    DekFile f = DekFile::parse(dek_file_bytes);
    auto it = f.entries.find(me.id());
    if (it == f.entries.end())
        fail(Errc::not_a_recipient, "identity " + hex_encode(me.id()) + " has no DEK entry");
    return unwrap_dek(it->second, me);
}

Bytes sign(ByteSpan payload, const Identity& me) {
    PkeyPtr pkey = private_pkey(me.sign_priv, me.pub.sign_pub);
    MdCtxPtr md(EVP_MD_CTX_new());
    if (!md || EVP_DigestSignInit(md.get(), nullptr, EVP_sha256(), nullptr, pkey.get()) != 1)
        ssl_bug("sign init");
    std::size_t n = 0;
    if (EVP_DigestSign(md.get(), nullptr, &n, payload.data(), payload.size()) != 1)
        ssl_bug("sign size");
    Bytes sig(n);
    if (EVP_DigestSign(md.get(), sig.data(), &n, payload.data(), payload.size()) != 1)
        ssl_bug("sign");
    sig.resize(n);  // DER signatures are variable length
    return sig;
}

bool verify_sig(ByteSpan payload, ByteSpan signature, ByteSpan signer_pub) {
    PkeyPtr pkey = public_pkey(signer_pub);
    if (!pkey) return false;
    MdCtxPtr md(EVP_MD_CTX_new());
    if (!md || EVP_DigestVerifyInit(md.get(), nullptr, EVP_sha256(), nullptr, pkey.get()) != 1) {
        ERR_clear_error();
        return false;
    }
    int rc = EVP_DigestVerify(md.get(), signature.data(), signature.size(), payload.data(),
                              payload.size());
    ERR_clear_error();
    return rc == 1;
}

}  // namespace edg
