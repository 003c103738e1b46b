#include "edg/cas.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <system_error>

#include "edg/crypto.hpp"
#include "fsutil.hpp"

namespace edg {

namespace fs = std::filesystem;
using fsutil::FileLock;
using fsutil::read_file;
using fsutil::throw_io;
using fsutil::write_file_atomic;

Cid Cid::of(ByteSpan blob) { return Cid{sha256(blob)}; }

std::optional<Cid> Cid::from_hex(std::string_view hex) {
    if (hex.size() != 64) return std::nullopt;
    auto bytes = hex_decode(hex);
    if (!bytes) return std::nullopt;
    Cid cid;
    std::copy(bytes->begin(), bytes->end(), cid.digest.begin());
    return cid;
}

bool Cid::is_zero() const {
    for (auto b : digest)
        if (b) return false;
    return true;
}

CasStore::CasStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "objects", ec);
    if (ec) fail(Errc::io_failure, "cannot create store at " + root_.string());
    load_pins();
}

fs::path CasStore::object_path(const Cid& cid) const {
    std::string hex = cid.hex();
    return root_ / "objects" / hex.substr(0, 2) / hex;
}

Cid CasStore::put(ByteSpan bytes) {
    Cid cid = Cid::of(bytes);
    std::lock_guard lk(mu_);
    FileLock flock(root_ / "lock");

    fs::path path = object_path(cid);
    bool found = false;
    Bytes existing = read_file(path, found);
    if (found) {
        // Same cid must mean same bytes; anything else is fatal corruption.
        if (existing.size() != bytes.size() ||
            !std::equal(existing.begin(), existing.end(), bytes.begin()))
            fail(Errc::integrity_violation, "cid collision for " + cid.hex());
        return cid;
    }

    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw_io("mkdir " + path.parent_path().string(), ec.value());
    write_file_atomic(path, bytes);
    return cid;
}

Bytes CasStore::get(const Cid& cid) const {
    bool found = false;
    Bytes data = read_file(object_path(cid), found);
    if (!found) fail(Errc::not_found, "no object " + cid.hex());
    if (sha256(data) != cid.digest)
        fail(Errc::integrity_violation, "object " + cid.hex() + " fails its hash check");
    return data;
}

bool CasStore::contains(const Cid& cid) const {
    std::error_code ec;
    return fs::exists(object_path(cid), ec);
}

std::optional<Hash256> CasStore::stored_hash(const Cid& cid) const {
    bool found = false;
    Bytes data = read_file(object_path(cid), found);
    if (!found) return std::nullopt;
    return sha256(data);
}

void CasStore::load_pins() {
    pins_.clear();
    std::ifstream in(root_ / "pins");
    std::string line;
    while (std::getline(in, line)) {
        if (auto cid = Cid::from_hex(line)) pins_.insert(*cid);
    }
}

void CasStore::save_pins_locked() const {
    std::string out;
    for (const Cid& cid : pins_) {  // std::set iterates sorted
        out += cid.hex();
        out += '\n';
    }
    write_file_atomic(root_ / "pins",
                      ByteSpan(reinterpret_cast<const std::uint8_t*>(out.data()), out.size()));
}

void CasStore::pin(const Cid& cid) {
    std::lock_guard lk(mu_);
    FileLock flock(root_ / "lock");
    if (!contains(cid)) fail(Errc::not_found, "cannot pin missing object " + cid.hex());
    load_pins();  // merge concurrent pin updates from other processes
    pins_.insert(cid);
    save_pins_locked();
}

void CasStore::unpin(const Cid& cid) {
    std::lock_guard lk(mu_);
    FileLock flock(root_ / "lock");
    if (!contains(cid)) fail(Errc::not_found, "cannot unpin missing object " + cid.hex());
    load_pins();
    pins_.erase(cid);
    save_pins_locked();
}

bool CasStore::pinned(const Cid& cid) const {
    std::lock_guard lk(mu_);
    return pins_.count(cid) != 0;
}

std::vector<BlobInfo> CasStore::list() const {
    std::lock_guard lk(mu_);
    std::vector<BlobInfo> out;
    std::error_code ec;
    for (const auto& shard : fs::directory_iterator(root_ / "objects", ec)) {
        if (!shard.is_directory()) continue;
        for (const auto& entry : fs::directory_iterator(shard.path())) {
            auto cid = Cid::from_hex(entry.path().filename().string());
            if (!cid) continue;
            BlobInfo info;
            info.cid = *cid;
            info.size = entry.file_size();
            info.pinned = pins_.count(*cid) != 0;
            struct stat st;
            if (::stat(entry.path().c_str(), &st) == 0) info.created_at = st.st_mtime;
            out.push_back(std::move(info));
        }
    }
    std::sort(out.begin(), out.end(),
              [](const BlobInfo& a, const BlobInfo& b) { return a.cid < b.cid; });
    return out;
}

std::size_t CasStore::object_count() const {
    std::size_t n = 0;
    std::error_code ec;
    for (const auto& shard : fs::directory_iterator(root_ / "objects", ec)) {
        if (!shard.is_directory()) continue;
        for (const auto& entry : fs::directory_iterator(shard.path()))
            if (entry.is_regular_file()) ++n;
    }
    return n;
}

std::vector<Cid> CasStore::gc(const std::set<Cid>& roots) {
    std::lock_guard lk(mu_);
    FileLock flock(root_ / "lock");
    load_pins();

    std::vector<Cid> removed;
    std::error_code ec;
    for (const auto& shard : fs::directory_iterator(root_ / "objects", ec)) {
        if (!shard.is_directory()) continue;
        for (const auto& entry : fs::directory_iterator(shard.path())) {
            auto cid = Cid::from_hex(entry.path().filename().string());
            if (!cid || pins_.count(*cid) || roots.count(*cid)) continue;
            std::error_code rm_ec;
            fs::remove(entry.path(), rm_ec);
            if (rm_ec)
                fail(Errc::io_failure, "gc could not remove " + cid->hex() + ": " +
                                           rm_ec.message());
            removed.push_back(*cid);
        }
    }
    std::sort(removed.begin(), removed.end());
    return removed;
}

}  // namespace edg
