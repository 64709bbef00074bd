// Shared constants and small helpers used across the library.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace evload {

inline constexpr double kPi = 3.14159265358979323846;

// Thrown when an input violates a documented precondition.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Thrown when an iterative numerical procedure cannot proceed
// (singular system, divergence past recovery, bad conditioning).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown by file loaders on malformed input.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double clamp(double x, double lo, double hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

inline bool near(double a, double b, double tol) {
    return std::abs(a - b) <= tol;
}

inline bool near_rel(double a, double b, double rtol, double atol = 0.0) {
    return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

// FNV-1a, used for config digests in run manifests.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace evload
