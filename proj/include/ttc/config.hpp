#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttc/embedding.hpp"
#include "ttc/generation.hpp"
#include "ttc/policy.hpp"

namespace ttc {

// Which question set supplies demonstration neighbors: the whole corpus or
// only questions still active when the prompt is built.
enum class NeighborhoodDomain { full_set, active_set };

std::string to_string(NeighborhoodDomain domain);
NeighborhoodDomain neighborhood_domain_from_string(const std::string& name);

// standard = gamma elimination on the operational grader;
// self_consistency = consensus elimination, accuracy as headline metric.
enum class RunMode { standard, self_consistency };

std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

enum class BackendKind { sim, http };
enum class GraderKind { ground_truth, model };
enum class EmbedderKind { hashing, metadata, remote };
enum class DifficultyKind { sim, model };

struct BackendConfig {
    BackendKind kind = BackendKind::sim;
    HttpBackendConfig http;          // used when kind = http
    std::string api_key_env;         // env var holding the bearer token
};

struct SimConfig {
    double alpha = 0.5;
    double tau = 0.5;
    double eta = 0.0;
    SimQuestionProfile defaults;     // profile for questions without metadata
};

struct GraderConfig {
    GraderKind kind = GraderKind::ground_truth;
    double flip_prob = 0.0;          // > 0 wraps the grader in label noise
    double consensus_threshold = 0.75;
    HttpBackendConfig judge;         // used when kind = model
    std::string judge_api_key_env;
};

struct EmbedderConfig {
    EmbedderKind kind = EmbedderKind::hashing;
    size_t dim = 256;                // hashing only
    RemoteEmbedderConfig remote;     // used when kind = remote
    std::string api_key_env;
};

struct DifficultyConfig {
    DifficultyKind kind = DifficultyKind::sim;
    HttpBackendConfig estimator;     // used when kind = model
    std::string api_key_env;
};

struct SandboxConfig {
    std::string python_path = "python3";
    double wall_time_s = 10.0;
    long long memory_bytes = 512ll * 1024 * 1024;
};

// Complete description of an experiment. Keys in the JSON form mirror the
// symbols used throughout: R, R_warm, K, P, gamma.
struct RunConfig {
    std::string corpus_path;
    int R = 4;
    int R_warm = 1;
    int K = 1;
    int P = 3;
    double gamma = 1.0;
    double temp_step = 0.4;          // temp_schedule increment per round
    std::vector<PolicyKind> policies;
    std::vector<uint64_t> seeds;
    NeighborhoodDomain neighborhood_domain = NeighborhoodDomain::full_set;
    RunMode mode = RunMode::standard;
    DecodingParams decoding;
    BackendConfig backend;
    SimConfig sim;
    GraderConfig grader;
    EmbedderConfig embedder;
    DifficultyConfig difficulty;
    SandboxConfig sandbox;
    std::string templates_dir;       // non-empty overrides builtin templates
    size_t max_prompt_chars = 262144;

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    // Throws ConfigError naming the offending field(s).
    void validate() const;

    // Digest of everything except seeds and policies: logs produced from the
    // same experiment under different (policy, seed) pairs share it.
    std::string base_digest() const;
};

RunConfig load_config(const std::string& path);

}  // namespace ttc
