// Compares the serial reference diff against the OpenMP-parallel path on
// synthetic workloads and checks the outputs match byte-for-byte.

#include <chrono>
#include <cstdio>
#include <random>

#include "edg/patch.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

edg::Bytes random_bytes(std::size_t n, std::mt19937_64& rng) {
    edg::Bytes out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(rng());
    return out;
}

// target = base with `edits` random 1 KiB spans rewritten
edg::Bytes edited_copy(const edg::Bytes& base, int edits, std::mt19937_64& rng) {
    edg::Bytes target = base;
    for (int i = 0; i < edits; ++i) {
        std::size_t len = std::min<std::size_t>(1024, target.size());
        std::size_t at = rng() % (target.size() - len + 1);
        for (std::size_t k = 0; k < len; ++k)
            target[at + k] = static_cast<std::uint8_t>(rng());
    }
    return target;
}

double run_ms(const edg::Bytes& base, const edg::Bytes& target, bool parallel,
              edg::Bytes& out_patch) {
    edg::DiffOptions opts;
    opts.parallel = parallel;
    auto t0 = std::chrono::steady_clock::now();
    edg::PatchBlob patch = parallel ? edg::diff(base, target, opts)
                                    : edg::diff_serial(base, target, opts);
    auto t1 = std::chrono::steady_clock::now();
    out_patch = patch.serialize();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t mib = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 64;
    int rounds = argc > 2 ? std::atoi(argv[2]) : 3;

#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif
    std::printf("input: %zu MiB base, 64 random 1 KiB edits, %d rounds\n\n", mib, rounds);
    std::printf("%-10s %12s %12s %10s %12s\n", "round", "serial ms", "parallel ms", "speedup",
                "patch bytes");

    std::mt19937_64 rng(42);
    edg::Bytes base = random_bytes(mib << 20, rng);
    edg::Bytes target = edited_copy(base, 64, rng);

    for (int r = 0; r < rounds; ++r) {
        edg::Bytes serial_patch, parallel_patch;
        double serial_ms = run_ms(base, target, false, serial_patch);
        double parallel_ms = run_ms(base, target, true, parallel_patch);
        if (serial_patch != parallel_patch) {
            std::printf("MISMATCH: parallel diff differs from serial reference\n");
            return 1;
        }
        std::printf("%-10d %12.1f %12.1f %9.2fx %12zu\n", r, serial_ms, parallel_ms,
                    serial_ms / parallel_ms, serial_patch.size());
    }
    return 0;
}
