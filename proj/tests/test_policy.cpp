#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <string>
#include <vector>

#include "support/helpers.hpp"
#include "ttc/config.hpp"
#include "ttc/error.hpp"
#include "ttc/policy.hpp"
#include "ttc/rng.hpp"

using namespace ttc;
using ttc_test::make_math_question;

namespace {

RunConfig base_config() {
    RunConfig config;
    config.corpus_path = "corpus.jsonl";
    config.policies = {PolicyKind::elimination};
    config.seeds = {1};
    return config;
}

PlanContext context_of(std::vector<std::string> all, std::vector<std::string> active) {
    PlanContext ctx;
    ctx.all_ids = std::move(all);
    ctx.active_ids = std::move(active);
    return ctx;
}

class CountingBackend : public GenerationBackend {
public:
    explicit CountingBackend(std::string reply) : reply_(std::move(reply)) {}

    std::string id() const override { return "counting"; }

    GenerationResult generate(const PromptSpec& prompt, const DecodingParams& params,
                              SeededRng& rng) override {
        ++calls;
        last_prompt = prompt.rendered_text;
        last_temperature = params.temperature;
        last_seed = rng.seed();
        GenerationResult result;
        result.text = reply_;
        result.backend_id = id();
        return result;
    }

    int calls = 0;
    std::string last_prompt;
    double last_temperature = -1.0;
    uint64_t last_seed = 0;

private:
    std::string reply_;
};

}  // namespace

TEST_CASE("policy names round-trip and reject unknowns") {
    for (PolicyKind kind : all_policy_kinds()) {
        CHECK(policy_kind_from_string(to_string(kind)) == kind);
    }
    CHECK(to_string(PolicyKind::evolve_similar) == "evolve_similar");
    CHECK_THROWS_AS(policy_kind_from_string("greedy"), ConfigError);
}

TEST_CASE("apportionment reproduces the proportional example") {
    std::map<std::string, double> difficulties = {{"a", 0.1}, {"b", 0.3}, {"c", 0.6}};
    auto shares = apportion_largest_remainder(difficulties, 10);
    CHECK(shares["a"] == 1);
    CHECK(shares["b"] == 3);
    CHECK(shares["c"] == 6);
}

TEST_CASE("apportionment clamps every share to at least one") {
    auto zero_weight = apportion_largest_remainder({{"a", 0.0}, {"b", 1.0}}, 10);
    CHECK(zero_weight["a"] == 1);
    CHECK(zero_weight["b"] == 10);

    auto tiny_budget = apportion_largest_remainder({{"a", 0.2}, {"b", 0.3}, {"c", 0.5}}, 1);
    CHECK(tiny_budget["a"] == 1);
    CHECK(tiny_budget["b"] == 1);
    CHECK(tiny_budget["c"] == 1);
}

TEST_CASE("apportionment splits evenly when all weights are zero") {
    auto shares = apportion_largest_remainder({{"a", 0.0}, {"b", 0.0}}, 4);
    CHECK(shares["a"] == 2);
    CHECK(shares["b"] == 2);
}

TEST_CASE("apportionment handles empty input and rejects bad weights") {
    CHECK(apportion_largest_remainder({}, 10).empty());
    CHECK_THROWS_AS(apportion_largest_remainder({{"a", -0.1}}, 10), Error);
    CHECK_THROWS_AS(apportion_largest_remainder({{"a", 1.0}}, -1), Error);
}

TEST_CASE("apportionment stays within slack and never inverts difficulty order") {
    RngStream rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        size_t n = 1 + rng.uniform_below(12);
        long long budget = static_cast<long long>(rng.uniform_below(60));
        std::map<std::string, double> weights;
        for (size_t i = 0; i < n; ++i) {
            weights["q" + std::to_string(i)] = rng.uniform01();
        }

        auto shares = apportion_largest_remainder(weights, budget);
        REQUIRE(shares.size() == n);

        long long sum = 0;
        for (const auto& [id, count] : shares) {
            CHECK(count >= 1);
            sum += count;
        }
        CHECK(sum >= budget);
        CHECK(sum <= budget + static_cast<long long>(n));

        for (const auto& [id_a, w_a] : weights) {
            for (const auto& [id_b, w_b] : weights) {
                if (w_a > w_b) {
                    // Higher difficulty may not fall more than the rounding
                    // slack below a lower one.
                    CHECK(shares[id_a] + 1 >= shares[id_b]);
                }
            }
        }
    }
}

TEST_CASE("apportionment sums exactly to the budget when no clamping occurs") {
    RngStream rng(72);
    for (int trial = 0; trial < 100; ++trial) {
        size_t n = 1 + rng.uniform_below(8);
        std::map<std::string, double> weights;
        for (size_t i = 0; i < n; ++i) {
            weights["q" + std::to_string(i)] = 0.2 + rng.uniform01();
        }
        // Budget large enough that every quota is >= 1: no clamp distortion.
        long long budget = static_cast<long long>(n) * 10;
        auto shares = apportion_largest_remainder(weights, budget);
        long long sum = 0;
        for (const auto& [id, count] : shares) sum += count;
        CHECK(sum == budget);
    }
}

TEST_CASE("uniform plans cover every question every round") {
    RunConfig config = base_config();
    config.K = 2;
    PlanContext ctx = context_of({"a", "b", "c"}, {"b"});

    for (int t = 1; t <= config.R; ++t) {
        RoundPlan plan = plan_round(PolicyKind::uniform, ctx, t, config);
        CHECK(plan.round_index == t);
        CHECK(plan.allocations.size() == 3);
        CHECK(plan.demo_mode == DemoMode::none);
        for (std::string id : {"a", "b", "c"}) {
            CHECK(plan.allocations.at(id) == 2);
            CHECK(plan.prompt_stage.at(id) == PromptStage::warmup);
        }
    }
}

TEST_CASE("elimination plans cover exactly the active set") {
    RunConfig config = base_config();
    PlanContext ctx = context_of({"a", "b", "c", "d"}, {"a", "b", "c"});

    RoundPlan plan = plan_round(PolicyKind::elimination, ctx, 2, config);
    CHECK(plan.allocations.size() == 3);
    CHECK(plan.allocations.at("a") == 1);
    CHECK(plan.allocations.at("b") == 1);
    CHECK(plan.allocations.at("c") == 1);
    CHECK(plan.allocations.count("d") == 0);
    for (const auto& [id, stage] : plan.prompt_stage) CHECK(stage == PromptStage::warmup);
    CHECK(plan.decoding.temperature == doctest::Approx(0.3));
    CHECK(plan.demo_mode == DemoMode::none);
}

TEST_CASE("temperature schedule is an exact arithmetic sequence") {
    RunConfig config = base_config();
    PlanContext ctx = context_of({"a"}, {"a"});

    double expected[] = {0.3, 0.7, 1.1, 1.5};
    for (int t = 1; t <= 4; ++t) {
        RoundPlan plan = plan_round(PolicyKind::temp_schedule, ctx, t, config);
        CHECK(plan.decoding.temperature == doctest::Approx(expected[t - 1]).epsilon(1e-12));
        CHECK(plan.prompt_stage.at("a") == PromptStage::warmup);
        CHECK(plan.decoding.top_p == doctest::Approx(0.9));
        CHECK(plan.decoding.top_k == 40);
    }
}

TEST_CASE("evolving policies switch stage and demo mode after warm-up") {
    RunConfig config = base_config();
    config.R = 4;
    config.R_warm = 2;
    PlanContext ctx = context_of({"a", "b"}, {"a", "b"});

    for (int t = 1; t <= 2; ++t) {
        RoundPlan plan = plan_round(PolicyKind::evolve_similar, ctx, t, config);
        CHECK(plan.prompt_stage.at("a") == PromptStage::warmup);
        CHECK(plan.demo_mode == DemoMode::none);
    }
    for (int t = 3; t <= 4; ++t) {
        RoundPlan similar = plan_round(PolicyKind::evolve_similar, ctx, t, config);
        CHECK(similar.prompt_stage.at("a") == PromptStage::adaptive);
        CHECK(similar.demo_mode == DemoMode::similar);
        CHECK(similar.allocations.at("a") == 1);

        RoundPlan random = plan_round(PolicyKind::evolve_random, ctx, t, config);
        CHECK(random.prompt_stage.at("b") == PromptStage::adaptive);
        CHECK(random.demo_mode == DemoMode::random);
    }
}

TEST_CASE("difficulty-aware plans warm up like elimination then apportion") {
    RunConfig config = base_config();
    PlanContext ctx = context_of({"a", "b", "c"}, {"a", "b", "c"});
    ctx.difficulties = {{"a", 0.1}, {"b", 0.3}, {"c", 0.6}};
    ctx.sample_budget = 10;

    RoundPlan warm = plan_round(PolicyKind::difficulty_aware, ctx, 1, config);
    CHECK(warm.allocations.at("a") == 1);
    CHECK(warm.allocations.at("b") == 1);
    CHECK(warm.allocations.at("c") == 1);

    RoundPlan adaptive = plan_round(PolicyKind::difficulty_aware, ctx, 2, config);
    CHECK(adaptive.allocations.at("a") == 1);
    CHECK(adaptive.allocations.at("b") == 3);
    CHECK(adaptive.allocations.at("c") == 6);
    for (const auto& [id, stage] : adaptive.prompt_stage) CHECK(stage == PromptStage::warmup);
    CHECK(adaptive.demo_mode == DemoMode::none);
}

TEST_CASE("difficulty-aware defaults the budget to K times the active count") {
    RunConfig config = base_config();
    config.K = 3;
    PlanContext ctx = context_of({"a", "b"}, {"a", "b"});
    ctx.difficulties = {{"a", 0.5}, {"b", 0.5}};

    RoundPlan plan = plan_round(PolicyKind::difficulty_aware, ctx, 2, config);
    CHECK(plan.allocations.at("a") == 3);
    CHECK(plan.allocations.at("b") == 3);
}

TEST_CASE("difficulty-aware requires an estimate for every active question") {
    RunConfig config = base_config();
    PlanContext ctx = context_of({"a", "b"}, {"a", "b"});
    ctx.difficulties = {{"a", 0.5}};
    CHECK_THROWS_WITH_AS(plan_round(PolicyKind::difficulty_aware, ctx, 2, config),
                         doctest::Contains("\"b\""), ConfigError);
}

TEST_CASE("plans reject out-of-range rounds and handle empty active sets") {
    RunConfig config = base_config();
    PlanContext ctx = context_of({"a"}, {});

    CHECK_THROWS_AS(plan_round(PolicyKind::elimination, ctx, 0, config), Error);
    CHECK_THROWS_AS(plan_round(PolicyKind::elimination, ctx, 5, config), Error);

    RoundPlan plan = plan_round(PolicyKind::elimination, ctx, 2, config);
    CHECK(plan.allocations.empty());

    RoundPlan da = plan_round(PolicyKind::difficulty_aware, ctx, 2, config);
    CHECK(da.allocations.empty());
}

TEST_CASE("sim difficulty estimator returns one minus the base success probability") {
    std::map<std::string, SimQuestionProfile> profiles;
    SimQuestionProfile p;
    p.question_id = "q1";
    p.base_success_prob = 0.8;
    profiles["q1"] = p;

    SimDifficultyEstimator estimator(profiles);
    CHECK(estimator.id() == "sim");

    Question q = make_math_question("q1", "t", "7");
    DifficultyEstimate estimate = estimator.estimate(q);
    CHECK(estimate.question_id == "q1");
    CHECK(estimate.difficulty == doctest::Approx(0.2));
    CHECK(estimate.estimator_id == "sim");

    Question unknown = make_math_question("q9", "t", "7");
    CHECK_THROWS_WITH_AS(estimator.estimate(unknown), doctest::Contains("\"q9\""), ConfigError);
}

TEST_CASE("model difficulty estimator parses and caches ratings") {
    auto backend = std::make_shared<CountingBackend>("0.7");
    ModelDifficultyEstimator estimator(backend, 5);
    CHECK(estimator.id() == "difficulty:counting");

    Question q = make_math_question("q1", "How hard?", "7");
    DifficultyEstimate first = estimator.estimate(q);
    CHECK(first.difficulty == doctest::Approx(0.7));
    CHECK(backend->calls == 1);
    CHECK(backend->last_temperature == doctest::Approx(0.0));
    CHECK(backend->last_seed == derive_seed(5, "s5/difficulty/q=q1"));
    CHECK(backend->last_prompt == ModelDifficultyEstimator::rating_prompt(q));
    CHECK(backend->last_prompt.find("How hard?") != std::string::npos);

    DifficultyEstimate second = estimator.estimate(q);
    CHECK(second.difficulty == doctest::Approx(0.7));
    CHECK(backend->calls == 1);  // served from cache
}

TEST_CASE("model difficulty estimator clamps and rejects non-numeric ratings") {
    Question q = make_math_question("q1", "t", "7");

    ModelDifficultyEstimator wordy(std::make_shared<CountingBackend>("difficulty: 0.35 / 1"), 1);
    CHECK(wordy.estimate(q).difficulty == doctest::Approx(0.35));

    ModelDifficultyEstimator big(std::make_shared<CountingBackend>("2"), 1);
    CHECK(big.estimate(q).difficulty == doctest::Approx(1.0));

    ModelDifficultyEstimator dotted(std::make_shared<CountingBackend>(".25"), 1);
    CHECK(dotted.estimate(q).difficulty == doctest::Approx(0.25));

    ModelDifficultyEstimator vague(std::make_shared<CountingBackend>("quite hard"), 1);
    CHECK_THROWS_AS(vague.estimate(q), GradingError);
}

TEST_CASE("estimate_all covers a question list") {
    std::map<std::string, SimQuestionProfile> profiles;
    for (int i = 0; i < 3; ++i) {
        SimQuestionProfile p;
        p.question_id = "q" + std::to_string(i);
        p.base_success_prob = 0.1 * i;
        profiles[p.question_id] = p;
    }
    SimDifficultyEstimator estimator(profiles);

    std::vector<Question> questions;
    for (int i = 0; i < 3; ++i) {
        questions.push_back(make_math_question("q" + std::to_string(i), "t", "1"));
    }
    auto estimates = estimator.estimate_all(questions);
    REQUIRE(estimates.size() == 3);
    CHECK(estimates["q0"] == doctest::Approx(1.0));
    CHECK(estimates["q1"] == doctest::Approx(0.9));
    CHECK(estimates["q2"] == doctest::Approx(0.8));
}
