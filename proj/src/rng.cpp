#include "ttc/rng.hpp"

#include <cmath>
#include <cstdio>

#include "ttc/hash.hpp"

namespace ttc {

uint64_t derive_seed(uint64_t root, std::string_view path) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%llu", static_cast<unsigned long long>(root));
    std::string material;
    material.reserve(path.size() + 24);
    material.append(buf);
    material.push_back('\x1f');
    material.append(path);
    return sha256_prefix64(material);
}

std::string gen_seed_path(uint64_t run_seed, std::string_view question_id, int round,
                          int sample_index) {
    std::string p = "s" + std::to_string(run_seed) + "/gen/q=" + std::string(question_id) +
                    "/r=" + std::to_string(round) + "/k=" + std::to_string(sample_index);
    return p;
}

std::string demo_seed_path(uint64_t run_seed, std::string_view question_id, int round) {
    return "s" + std::to_string(run_seed) + "/demo/q=" + std::string(question_id) +
           "/r=" + std::to_string(round);
}

std::string flip_seed_path(uint64_t run_seed, std::string_view question_id, int round,
                           int sample_index) {
    return "s" + std::to_string(run_seed) + "/flip/q=" + std::string(question_id) +
           "/r=" + std::to_string(round) + "/k=" + std::to_string(sample_index);
}

double RngStream::uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

uint64_t RngStream::uniform_below(uint64_t n) {
    // Rejection sampling keeps the draw unbiased for any n.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % n;
}

uint64_t RngStream::geometric(double mean) {
    if (!(mean > 1.0)) return 1;
    double p = 1.0 / mean;
    double u = uniform01();
    // Support starts at 1; inversion of the geometric CDF.
    double x = std::floor(std::log1p(-u) / std::log1p(-p));
    if (x < 0.0) x = 0.0;
    return 1 + static_cast<uint64_t>(x);
}

}  // namespace ttc
