#pragma once

// Internal file-system helpers shared by the store and ledger backends.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "edg/bytes.hpp"
#include "edg/errors.hpp"

namespace edg::fsutil {

// Advisory cross-process lock, held for the duration of one mutation.
class FileLock {
public:
    explicit FileLock(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ >= 0) ::flock(fd_, LOCK_EX);
    }
    ~FileLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

[[noreturn]] inline void throw_io(const std::string& what, int err) {
    if (err == ENOSPC || err == EDQUOT)
        fail(Errc::storage_full, what + ": no space left on device");
    fail(Errc::io_failure, what + ": " + std::strerror(err));
}

inline Bytes read_file(const std::filesystem::path& path, bool& found) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        found = false;
        return {};
    }
    found = true;
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(Errc::io_failure, "read failed: " + path.string());
    return data;
}

// write-then-rename; the file either exists with full content or not at all
inline void write_file_atomic(const std::filesystem::path& path, ByteSpan bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw_io("open " + tmp.string(), errno);
    std::size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            int err = errno;
            ::close(fd);
            ::unlink(tmp.c_str());
            throw_io("write " + tmp.string(), err);
        }
        off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) {
        int err = errno;
        ::close(fd);
        ::unlink(tmp.c_str());
        throw_io("fsync " + tmp.string(), err);
    }
    ::close(fd);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw_io("rename to " + path.string(), ec.value());
    }
}

inline void append_with_fsync(const std::filesystem::path& path, ByteSpan bytes) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw_io("open " + path.string(), errno);
    std::size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            int err = errno;
            ::close(fd);
            throw_io("append " + path.string(), err);
        }
        off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) {
        int err = errno;
        ::close(fd);
        throw_io("fsync " + path.string(), err);
    }
    ::close(fd);
}

}  // namespace edg::fsutil
