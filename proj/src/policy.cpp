#include "ttc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "ttc/config.hpp"
#include "ttc/error.hpp"
#include "ttc/hash.hpp"
#include "ttc/rng.hpp"

namespace ttc {

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::uniform: return "uniform";
        case PolicyKind::elimination: return "elimination";
        case PolicyKind::difficulty_aware: return "difficulty_aware";
        case PolicyKind::evolve_random: return "evolve_random";
        case PolicyKind::evolve_similar: return "evolve_similar";
        case PolicyKind::temp_schedule: return "temp_schedule";
    }
    throw Error("unreachable policy kind");
}

PolicyKind policy_kind_from_string(const std::string& name) {
    for (PolicyKind kind : all_policy_kinds()) {
        if (to_string(kind) == name) return kind;
    }
    throw ConfigError("unknown policy \"" + name +
                      "\" (expected uniform, elimination, difficulty_aware, evolve_random, "
                      "evolve_similar, or temp_schedule)");
}

const std::vector<PolicyKind>& all_policy_kinds() {
    static const std::vector<PolicyKind> kinds = {
        PolicyKind::uniform,        PolicyKind::elimination,    PolicyKind::difficulty_aware,
        PolicyKind::evolve_random,  PolicyKind::evolve_similar, PolicyKind::temp_schedule,
    };
    return kinds;
}

std::string to_string(DemoMode mode) {
    switch (mode) {
        case DemoMode::none: return "none";
        case DemoMode::similar: return "similar";
        case DemoMode::random: return "random";
    }
    throw Error("unreachable demo mode");
}

std::map<std::string, int> apportion_largest_remainder(
    const std::map<std::string, double>& weights, long long budget) {
    std::map<std::string, int> shares;
    if (weights.empty()) return shares;
    if (budget < 0) throw Error("apportionment budget must be non-negative");

    double total = 0.0;
    for (const auto& [id, weight] : weights) {
        if (!std::isfinite(weight) || weight < 0.0) {
            throw Error("apportionment weight for \"" + id + "\" must be finite and >= 0");
        }
        total += weight;
    }

    struct Row {
        const std::string* id;
        double weight;
        long long base;
        double remainder;
    };
    std::vector<Row> rows;
    rows.reserve(weights.size());
    long long assigned = 0;
    for (const auto& [id, weight] : weights) {
        double quota = total > 0.0
                           ? static_cast<double>(budget) * (weight / total)
                           : static_cast<double>(budget) / static_cast<double>(weights.size());
        double floored = std::floor(quota);
        long long base = static_cast<long long>(floored);
        rows.push_back({&id, weight, base, quota - floored});
        assigned += base;
    }

    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.remainder != b.remainder) return a.remainder > b.remainder;
        if (a.weight != b.weight) return a.weight > b.weight;
        return *a.id < *b.id;
    });
    // Exact arithmetic leaves fewer leftover units than rows; rounding noise
    // can add a unit or two, so distribute cyclically.
    for (long long leftover = budget - assigned; leftover > 0;) {
        for (Row& row : rows) {
            if (leftover == 0) break;
            ++row.base;
            --leftover;
        }
    }

    for (const Row& row : rows) {
        long long clamped = std::max<long long>(1, row.base);
        if (clamped > std::numeric_limits<int>::max()) {
            throw Error("apportioned share for \"" + *row.id + "\" exceeds int range");
        }
        shares[*row.id] = static_cast<int>(clamped);
    }
    return shares;
}

RoundPlan plan_round(PolicyKind kind, const PlanContext& context, int t,
                     const RunConfig& config) {
    if (t < 1 || t > config.R) {
        throw Error("round index " + std::to_string(t) + " outside 1.." +
                    std::to_string(config.R));
    }

    RoundPlan plan;
    plan.round_index = t;
    plan.decoding = config.decoding;

    auto allocate_each = [&](const std::vector<std::string>& ids, PromptStage stage) {
        for (const std::string& id : ids) {
            plan.allocations[id] = config.K;
            plan.prompt_stage[id] = stage;
        }
    };

    switch (kind) {
        case PolicyKind::uniform:
            // Solved questions keep sampling; the engine's token-matched
            // stopping rule is what bounds this policy.
            allocate_each(context.all_ids, PromptStage::warmup);
            break;

        case PolicyKind::elimination:
            allocate_each(context.active_ids, PromptStage::warmup);
            break;

        case PolicyKind::temp_schedule:
            allocate_each(context.active_ids, PromptStage::warmup);
            plan.decoding.temperature =
                config.decoding.temperature + config.temp_step * (t - 1);
            break;

        case PolicyKind::evolve_similar:
        case PolicyKind::evolve_random: {
            bool warm = t <= config.R_warm;
            allocate_each(context.active_ids,
                          warm ? PromptStage::warmup : PromptStage::adaptive);
            if (!warm) {
                plan.demo_mode = kind == PolicyKind::evolve_similar ? DemoMode::similar
                                                                    : DemoMode::random;
            }
            break;
        }

        case PolicyKind::difficulty_aware: {
            if (t <= config.R_warm) {
                allocate_each(context.active_ids, PromptStage::warmup);
                break;
            }
            std::map<std::string, double> weights;
            for (const std::string& id : context.active_ids) {
                auto it = context.difficulties.find(id);
                if (it == context.difficulties.end()) {
                    throw ConfigError("no difficulty estimate for question \"" + id + "\"");
                }
                weights[id] = it->second;
            }
            long long budget =
                context.sample_budget > 0
                    ? context.sample_budget
                    : static_cast<long long>(config.K) *
                          static_cast<long long>(context.active_ids.size());
            for (const auto& [id, count] : apportion_largest_remainder(weights, budget)) {
                plan.allocations[id] = count;
                plan.prompt_stage[id] = PromptStage::warmup;
            }
            break;
        }
    }
    return plan;
}

DifficultyEstimate DifficultyEstimator::estimate(const Question& question) {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(question.id);
        if (it != cache_.end()) return {question.id, it->second, id()};
    }
    double value = compute(question);
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = cache_.emplace(question.id, value);
    (void)inserted;
    return {question.id, it->second, id()};
}

std::map<std::string, double> DifficultyEstimator::estimate_all(
    const std::vector<Question>& questions) {
    std::map<std::string, double> estimates;
    for (const Question& q : questions) estimates[q.id] = estimate(q).difficulty;
    return estimates;
}

SimDifficultyEstimator::SimDifficultyEstimator(std::map<std::string, SimQuestionProfile> profiles)
    : profiles_(std::move(profiles)) {}

double SimDifficultyEstimator::compute(const Question& question) {
    auto it = profiles_.find(question.id);
    if (it == profiles_.end()) {
        throw ConfigError("no sim profile for question \"" + question.id + "\"");
    }
    return 1.0 - it->second.base_success_prob;
}

ModelDifficultyEstimator::ModelDifficultyEstimator(std::shared_ptr<GenerationBackend> backend,
                                                   uint64_t run_seed)
    : backend_(std::move(backend)), run_seed_(run_seed) {}

std::string ModelDifficultyEstimator::rating_prompt(const Question& question) {
    return "Rate how difficult the following problem is for a strong solver.\n"
           "Reply with only a number between 0 and 1, where 0 means trivial and 1 means "
           "extremely hard.\n\nProblem:\n" +
           question_prompt_body(question) + "\n\nDifficulty:";
}

std::string ModelDifficultyEstimator::id() const { return "difficulty:" + backend_->id(); }

double ModelDifficultyEstimator::compute(const Question& question) {
    PromptSpec prompt;
    prompt.target_question_id = question.id;
    prompt.stage = PromptStage::warmup;
    prompt.template_family = question.task_family;
    prompt.rendered_text = rating_prompt(question);
    prompt.text_digest = sha256_hex(prompt.rendered_text);

    DecodingParams params;
    params.temperature = 0.0;
    params.max_output_tokens = 16;

    std::string path =
        "s" + std::to_string(run_seed_) + "/difficulty/q=" + question.id;
    SeededRng rng(derive_seed(run_seed_, path));
    GenerationResult reply = backend_->generate(prompt, params, rng);

    const std::string& text = reply.text;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        bool starts_number = (c >= '0' && c <= '9') ||
                             (c == '.' && i + 1 < text.size() && text[i + 1] >= '0' &&
                              text[i + 1] <= '9');
        if (!starts_number) continue;
        char* end = nullptr;
        double value = std::strtod(text.c_str() + i, &end);
        if (end != text.c_str() + i && std::isfinite(value)) {
            return std::clamp(value, 0.0, 1.0);
        }
    }
    throw GradingError("difficulty estimate for question \"" + question.id +
                       "\" is not a number: " + text);
}

}  // namespace ttc
