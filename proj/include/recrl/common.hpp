#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace recrl {

// Error categories map 1:1 to CLI exit codes (see tools/recrl_main.cpp).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. mt19937_64 has a standard-pinned output sequence and the
// double/int conversions below avoid std::uniform_*_distribution, whose
// output is implementation-defined. Same seed => same stream on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Unbiased uniform index in [0, n). n must be > 0.
    std::size_t index(std::size_t n);

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);

    // Standard normal via Box-Muller (no cached spare, keeps the stream simple).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Stable seed derivation for per-record / per-epoch substreams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

// Shortest-ish decimal rendering used for CSV output; deterministic.
std::string format_double(double v);

// Runs fn(i) for i in [0, n). With threads <= 1 this is a plain loop; with
// more threads, indices are chunked and any thrown exception is rethrown on
// the calling thread. Callers that need determinism must write results into
// per-index slots and reduce in index order afterwards.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace recrl
