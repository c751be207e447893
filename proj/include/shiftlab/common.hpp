// Error categories and small shared helpers used across the library.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace shiftlab {

// Base error. The CLI maps the subclasses to distinct exit codes.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration: malformed manifest, invalid spec, inconsistent options.
struct config_error : error {
    using error::error;
};

// Bad external data: missing/corrupt IDX files, tampered checkpoints.
struct data_error : error {
    using error::error;
};

// Shape or argument mismatch between tensors/ops.
struct shape_error : error {
    using error::error;
};

// Failure during execution (non-finite loss, infeasible placement, ...).
struct run_error : error {
    using error::error;
};

// FNV-1a, used for manifest hashes and checkpoint checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), seed);
}

}  // namespace shiftlab
