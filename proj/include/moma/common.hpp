// Shared error types, deterministic RNG and allocation accounting.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace moma {

// Shape/size disagreement between tensors or grids.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated call contract (non-scalar loss, nonpositive step size, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad config value or unknown enum string.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Pattern DSL rejection; carries a 1-based character position.
struct PatternParseError : std::runtime_error {
    size_t position;
    PatternParseError(const std::string& msg, size_t pos)
        : std::runtime_error(msg + " (at position " + std::to_string(pos) + ")"), position(pos) {}
};

// Bad training data (label out of range, empty batch).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a training run must stop (NaN loss); message carries the diagnostic dump.
struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Tensor-byte accounting. Every TensorData registers its buffers here, so the
// high-water mark is a portable proxy for device memory in scaling benchmarks.

namespace memory {

inline std::atomic<size_t>& current_bytes() {
    static std::atomic<size_t> v{0};
    return v;
}

inline std::atomic<size_t>& peak_bytes() {
    static std::atomic<size_t> v{0};
    return v;
}

inline void on_alloc(size_t bytes) {
    size_t now = current_bytes().fetch_add(bytes) + bytes;
    size_t peak = peak_bytes().load();
    while (now > peak && !peak_bytes().compare_exchange_weak(peak, now)) {
    }
}

inline void on_free(size_t bytes) { current_bytes().fetch_sub(bytes); }

inline void reset_peak() { peak_bytes().store(current_bytes().load()); }

}  // namespace memory

// ---------------------------------------------------------------------------
// Splittable counter-based RNG (splitmix64 core). Each split() derives an
// independent stream, so one experiment seed reproduces every draw.

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; second value cached so draws stay deterministic.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    size_t index(size_t n) { return static_cast<size_t>(next_u64() % n); }

    // Independent child stream; advances this stream by one draw.
    Rng split() { return Rng(next_u64() ^ 0xa0761d6478bd642full); }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace moma
