#include "edg/keystore.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <cstring>

#include <nlohmann/json.hpp>

#include "fsutil.hpp"

namespace edg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kKeystoreAad = "edg-keystore-v1";
constexpr std::uint64_t kScryptN = 1 << 14;
constexpr std::uint32_t kScryptR = 8;
constexpr std::uint32_t kScryptP = 1;

std::array<std::uint8_t, kDekBytes> derive_key(const std::string& passphrase, ByteSpan salt,
                                               std::uint64_t n, std::uint32_t r,
                                               std::uint32_t p) {
    std::array<std::uint8_t, kDekBytes> key{};
    if (EVP_PBE_scrypt(passphrase.data(), passphrase.size(), salt.data(), salt.size(), n, r, p,
                       0 /* default maxmem */, key.data(), key.size()) != 1)
        fail(Errc::io_failure, "scrypt key derivation failed");
    return key;
}

fs::path entry_path(const fs::path& dir, const std::string& name) {
    return dir / (name + ".json");
}

Bytes hex_field(const json& j, const char* field) {
    if (!j.contains(field) || !j[field].is_string())
        fail(Errc::authentication_failure, std::string("keystore entry missing ") + field);
    auto bytes = hex_decode(j[field].get<std::string>());
    if (!bytes) fail(Errc::authentication_failure, std::string("keystore bad hex in ") + field);
    return *bytes;
}

json load_entry(const fs::path& dir, const std::string& name) {
    bool found = false;
    Bytes raw = fsutil::read_file(entry_path(dir, name), found);
    if (!found) fail(Errc::not_found, "no identity named '" + name + "'");
    json j = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded())
        fail(Errc::authentication_failure, "keystore entry is not valid JSON");
    return j;
}

}  // namespace

void save_identity(const fs::path& keystore_dir, const std::string& name,
                   const Identity& identity, const std::string& passphrase) {
    std::error_code ec;
    fs::create_directories(keystore_dir, ec);
    if (ec) fail(Errc::io_failure, "cannot create keystore at " + keystore_dir.string());

    Bytes salt(16);
    if (RAND_bytes(salt.data(), static_cast<int>(salt.size())) != 1)
        fail(Errc::entropy_unavailable, "system CSPRNG unavailable");
    auto key = derive_key(passphrase, salt, kScryptN, kScryptR, kScryptP);

    Bytes secret;
    secret.insert(secret.end(), identity.sign_priv.begin(), identity.sign_priv.end());
    secret.insert(secret.end(), identity.enc_priv.begin(), identity.enc_priv.end());

    std::array<std::uint8_t, kNonceBytes> nonce{};
    if (RAND_bytes(nonce.data(), static_cast<int>(nonce.size())) != 1)
        fail(Errc::entropy_unavailable, "system CSPRNG unavailable");
    SealedBlob sealed =
        gcm_seal(key, nonce, secret,
                 ByteSpan(reinterpret_cast<const std::uint8_t*>(kKeystoreAad.data()),
                          kKeystoreAad.size()));
    OPENSSL_cleanse(secret.data(), secret.size());
    OPENSSL_cleanse(key.data(), key.size());

    json j = {
        {"version", 1},
        {"name", name},
        {"id", hex_encode(identity.pub.id)},
        {"sign_pub", hex_encode(identity.pub.sign_pub)},
        {"enc_pub", hex_encode(identity.pub.enc_pub)},
        {"kdf",
         {{"algo", "scrypt"},
          {"n", kScryptN},
          {"r", kScryptR},
          {"p", kScryptP},
          {"salt", hex_encode(salt)}}},
        {"sealed_keys", hex_encode(sealed.serialize())},
    };
    std::string text = j.dump(2);
    text.push_back('\n');
    fsutil::write_file_atomic(
        entry_path(keystore_dir, name),
        ByteSpan(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Identity load_identity(const fs::path& keystore_dir, const std::string& name,
                       const std::string& passphrase) {
    json j = load_entry(keystore_dir, name);
    const json& kdf = j.contains("kdf") ? j["kdf"] : json::object();
    Bytes salt = hex_field(kdf, "salt");
    auto key = derive_key(passphrase, salt, kdf.value("n", kScryptN), kdf.value("r", kScryptR),
                          kdf.value("p", kScryptP));

    Bytes sealed_bytes = hex_field(j, "sealed_keys");
    SealedBlob sealed = SealedBlob::parse(sealed_bytes);
    Bytes secret;
    try {
        secret = gcm_open(key, sealed,
                          ByteSpan(reinterpret_cast<const std::uint8_t*>(kKeystoreAad.data()),
                                   kKeystoreAad.size()));
    } catch (const Error&) {
        OPENSSL_cleanse(key.data(), key.size());
        fail(Errc::authentication_failure, "wrong passphrase or corrupted keystore entry");
    }
    OPENSSL_cleanse(key.data(), key.size());
    if (secret.size() != 2 * kPrivKeyBytes)
        fail(Errc::authentication_failure, "keystore entry has malformed key material");

    Identity id;
    std::memcpy(id.sign_priv.data(), secret.data(), kPrivKeyBytes);
    std::memcpy(id.enc_priv.data(), secret.data() + kPrivKeyBytes, kPrivKeyBytes);
    OPENSSL_cleanse(secret.data(), secret.size());
    id.pub.sign_pub = hex_field(j, "sign_pub");
    id.pub.enc_pub = hex_field(j, "enc_pub");
    Bytes idb = hex_field(j, "id");
    Hash256 claimed{};
    if (idb.size() != kIdBytes)
        fail(Errc::authentication_failure, "keystore entry has malformed id");
    std::copy(idb.begin(), idb.end(), claimed.begin());
    if (sha256(id.pub.sign_pub) != claimed)
        fail(Errc::authentication_failure, "keystore id does not bind its signing key");
    id.pub.id = claimed;
    return id;
}

PublicIdentity load_public_identity(const fs::path& keystore_dir, const std::string& name) {
    json j = load_entry(keystore_dir, name);
    PublicIdentity pub;
    Bytes idb = hex_field(j, "id");
    if (idb.size() != kIdBytes)
        fail(Errc::authentication_failure, "keystore entry has malformed id");
    std::copy(idb.begin(), idb.end(), pub.id.begin());
    pub.sign_pub = hex_field(j, "sign_pub");
    pub.enc_pub = hex_field(j, "enc_pub");
    return pub;
}

std::vector<std::string> list_identities(const fs::path& keystore_dir) {
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(keystore_dir, ec)) {
        if (entry.path().extension() == ".json") out.push_back(entry.path().stem().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace edg
