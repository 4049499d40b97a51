#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttc/corpus.hpp"
#include "ttc/embedding.hpp"
#include "ttc/prompting.hpp"
#include "ttc/rng.hpp"

namespace ttc {

struct DecodingParams {
    double temperature = 0.3;
    double top_p = 0.9;
    int top_k = 40;
    long long max_output_tokens = 32768;
    long long thinking_budget = 0;  // 0 disables thinking

    bool operator==(const DecodingParams&) const = default;
};

// Stable content hash over all decoding fields; part of response cache keys.
std::string decoding_params_digest(const DecodingParams& params);

struct GenerationResult {
    std::string text;
    long long prompt_tokens = 0;
    long long output_tokens = 0;
    long long thinking_tokens = 0;
    std::string backend_id;
    double latency_s = 0.0;
    bool truncated = false;  // hit the output token limit

    bool operator==(const GenerationResult&) const = default;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;

    virtual std::string id() const = 0;

    // One sampled response with token accounting. Callable from many workers
    // at once; determinism comes from the per-call seed, never issue order.
    virtual GenerationResult generate(const PromptSpec& prompt, const DecodingParams& params,
                                      SeededRng& rng) = 0;
};

struct SimQuestionProfile {
    std::string question_id;
    double base_success_prob = 0.3;       // p0
    long long success_token_mean = 120;   // L_s
    long long failure_token_mean = 180;   // L_f, >= L_s
    std::string cluster_id;
};

struct SimParams {
    double alpha = 0.5;             // uplift per unit of similarity above the floor
    double tau = 0.5;               // similarity floor
    double eta = 0.0;               // uplift per unit of temperature above base
    double base_temperature = 0.3;
};

// clamp01( p0 + alpha * sum_d max(0, sim_d - tau) + temp_bonus )
double sim_effective_success_prob(const SimQuestionProfile& profile,
                                  const std::vector<double>& demo_similarities, double alpha,
                                  double tau, double temp_bonus);

// Geometric draws with mean L_s on success, L_f on failure. Thinking tokens
// are zero unless a budget is set, then drawn with mean min(budget/2, L_f).
std::pair<long long, long long> sim_token_cost(const SimQuestionProfile& profile, bool succeeded,
                                               long long thinking_budget, RngStream& rng);

// Deterministic simulated model. Success probability follows the additive
// uplift formula over the prompt's demonstrations; successful text carries
// the ground truth in the family's answer format so the full
// extract-and-grade path runs.
class SimBackend : public GenerationBackend {
public:
    SimBackend(const QuestionSet& questions, const EmbeddingStore& embeddings,
               std::map<std::string, SimQuestionProfile> profiles, SimParams params);

    std::string id() const override { return "sim"; }
    GenerationResult generate(const PromptSpec& prompt, const DecodingParams& params,
                              SeededRng& rng) override;

    const SimQuestionProfile& profile_of(const std::string& question_id) const;

private:
    const QuestionSet* questions_;
    const EmbeddingStore* embeddings_;
    std::map<std::string, SimQuestionProfile> profiles_;
    SimParams params_;
};

// Per-question profiles from corpus metadata (sim_p0, sim_ls, sim_lf,
// cluster), falling back to the given defaults for absent keys.
std::map<std::string, SimQuestionProfile> sim_profiles_from_corpus(
    const QuestionSet& questions, const SimQuestionProfile& defaults);

struct HttpBackendConfig {
    std::string base_url;  // scheme://host[:port][/prefix]
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key;                 // bearer token when non-empty
    int max_retries = 3;
    int retry_backoff_ms = 250;
    int timeout_s = 120;
    std::filesystem::path cache_path;    // empty disables the response cache
    nlohmann::json extensions;           // provider-specific request fields
};

// Chat-completion HTTP client. Requests carry (model, messages, temperature,
// top_p, max_tokens, seed) plus any configured extension fields. Responses
// are cached by (model, prompt digest, params digest, seed) so re-runs are
// idempotent. Failed calls throw; they never contribute tokens.
class HttpChatBackend : public GenerationBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config);

    std::string id() const override;
    GenerationResult generate(const PromptSpec& prompt, const DecodingParams& params,
                              SeededRng& rng) override;

    size_t cache_hits() const { return cache_hits_; }

private:
    GenerationResult fetch(const PromptSpec& prompt, const DecodingParams& params, uint64_t seed);
    void append_cache_line(const std::string& key, const GenerationResult& result);

    HttpBackendConfig config_;
    std::mutex mutex_;  // guards cache_ and cache_hits_; calls come from many workers
    std::map<std::string, GenerationResult> cache_;
    size_t cache_hits_ = 0;
};

}  // namespace ttc
