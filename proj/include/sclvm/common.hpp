#ifndef SCLVM_COMMON_HPP
#define SCLVM_COMMON_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sclvm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Violated precondition or type invariant (caller bug).
class contract_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Problem with user-supplied data (files, shapes, labels).
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure that survived the jitter escalation policy.
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw contract_error(message);
}

/// Deterministic random source. Normal variates use the polar method on
/// top of mt19937_64 so the stream is pinned independent of the standard
/// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::int64_t uniform_index(std::int64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::int64_t>(x % un);
    }

    /// Standard normal variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Matrix out(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal();
        return out;
    }

    Vector normal_vector(Eigen::Index n) {
        Vector out(n);
        for (Eigen::Index i = 0; i < n; ++i) out(i) = normal();
        return out;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Shortest decimal form that parses back to the same double.
std::string format_double(double x);

/// FNV-1a 64-bit digest of a byte buffer, as fixed-width hex.
std::string fnv1a_hex(const void* data, std::size_t size);

/// Digest of a file's bytes; throws data_error if unreadable.
std::string digest_file(const std::string& path);

}  // namespace sclvm

#endif
