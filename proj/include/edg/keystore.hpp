#pragma once

// Identity persistence. One JSON file per identity under the keystore
// directory; public material is readable as-is, private keys are sealed with
// AES-256-GCM under a scrypt-derived key.

#include <filesystem>
#include <string>
#include <vector>

#include "edg/crypto.hpp"

namespace edg {

void save_identity(const std::filesystem::path& keystore_dir, const std::string& name,
                   const Identity& identity, const std::string& passphrase);

// Throws NotFound for a missing entry, AuthenticationFailure for a wrong
// passphrase or tampered file.
Identity load_identity(const std::filesystem::path& keystore_dir, const std::string& name,
                       const std::string& passphrase);

// Public half only; no passphrase required.
PublicIdentity load_public_identity(const std::filesystem::path& keystore_dir,
                                    const std::string& name);

std::vector<std::string> list_identities(const std::filesystem::path& keystore_dir);

}  // namespace edg
