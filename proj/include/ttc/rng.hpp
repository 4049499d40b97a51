#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace ttc {

// Child seed for a structured lineage path under a root seed. Stable across
// platforms and runs; unrelated paths give independent streams.
uint64_t derive_seed(uint64_t root, std::string_view path);

// Path formatting helpers so every module spells lineage the same way.
std::string gen_seed_path(uint64_t run_seed, std::string_view question_id, int round,
                          int sample_index);
std::string demo_seed_path(uint64_t run_seed, std::string_view question_id, int round);
std::string flip_seed_path(uint64_t run_seed, std::string_view question_id, int round,
                           int sample_index);

// Deterministic random stream. Draws are hand-inverted from raw engine
// output so results never depend on the standard library's distribution
// implementations, which vary across platforms.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53 bits of precision.
    double uniform01();

    bool bernoulli(double p) { return uniform01() < p; }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_below(uint64_t n);

    // Geometric on {1, 2, ...} with the given mean (>= 1), via inversion.
    uint64_t geometric(double mean);

private:
    std::mt19937_64 engine_;
};

// A stream that remembers the seed it was built from. Remote backends key
// their caches on the seed value; simulated ones consume the stream.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : seed_(seed), stream_(seed) {}

    uint64_t seed() const { return seed_; }
    RngStream& stream() { return stream_; }

private:
    uint64_t seed_;
    RngStream stream_;
};

}  // namespace ttc
