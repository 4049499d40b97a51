#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ttc/corpus.hpp"
#include "ttc/generation.hpp"
#include "ttc/prompting.hpp"

namespace ttc {

struct RunConfig;

enum class PolicyKind {
    uniform,
    elimination,
    difficulty_aware,
    evolve_random,
    evolve_similar,
    temp_schedule,
};

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);
const std::vector<PolicyKind>& all_policy_kinds();

enum class DemoMode { none, similar, random };

std::string to_string(DemoMode mode);

// One round's allocation: which questions get how many samples, with which
// prompt stage, decoding parameters, and demonstration source.
struct RoundPlan {
    int round_index = 1;
    std::map<std::string, int> allocations;
    std::map<std::string, PromptStage> prompt_stage;
    DecodingParams decoding;
    DemoMode demo_mode = DemoMode::none;
};

struct DifficultyEstimate {
    std::string question_id;
    double difficulty = 0.0;  // in [0,1]
    std::string estimator_id;
};

// Immutable snapshot of the run state a planner needs. Both id lists keep
// corpus file order. sample_budget is the difficulty-aware round budget B_t;
// zero means the default K * |active|.
struct PlanContext {
    std::vector<std::string> all_ids;
    std::vector<std::string> active_ids;
    std::map<std::string, double> difficulties;
    long long sample_budget = 0;
};

RoundPlan plan_round(PolicyKind kind, const PlanContext& context, int t,
                     const RunConfig& config);

// Integer split of `budget` proportional to non-negative weights: floor the
// quotas, hand leftover units to the largest remainders (ties: larger weight,
// then smaller id), then clamp every share to >= 1. The clamp can exceed the
// budget by at most one unit per entry. A zero weight sum splits evenly.
std::map<std::string, int> apportion_largest_remainder(
    const std::map<std::string, double>& weights, long long budget);

// Deterministic per (estimator, question): first call computes, later calls
// replay the cached value.
class DifficultyEstimator {
public:
    virtual ~DifficultyEstimator() = default;

    virtual std::string id() const = 0;

    DifficultyEstimate estimate(const Question& question);

    std::map<std::string, double> estimate_all(const std::vector<Question>& questions);

protected:
    virtual double compute(const Question& question) = 0;

private:
    std::mutex mutex_;
    std::map<std::string, double> cache_;
};

// Difficulty = 1 - base success probability of the question's sim profile.
class SimDifficultyEstimator : public DifficultyEstimator {
public:
    explicit SimDifficultyEstimator(std::map<std::string, SimQuestionProfile> profiles);

    std::string id() const override { return "sim"; }

protected:
    double compute(const Question& question) override;

private:
    std::map<std::string, SimQuestionProfile> profiles_;
};

// Asks a judge-style backend to rate difficulty as a number in [0,1].
class ModelDifficultyEstimator : public DifficultyEstimator {
public:
    ModelDifficultyEstimator(std::shared_ptr<GenerationBackend> backend, uint64_t run_seed);

    static std::string rating_prompt(const Question& question);

    std::string id() const override;

protected:
    double compute(const Question& question) override;

private:
    std::shared_ptr<GenerationBackend> backend_;
    uint64_t run_seed_;
};

}  // namespace ttc
