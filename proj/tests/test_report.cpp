#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <string>
#include <vector>

#include "ttc/engine.hpp"
#include "ttc/error.hpp"
#include "ttc/report.hpp"
#include "support/helpers.hpp"

using namespace ttc;

namespace {

RoundReport make_report(int round, double coverage, TokenCounts round_tokens,
                        TokenCounts cum_tokens) {
    RoundReport report;
    report.round = round;
    report.coverage = coverage;
    report.tokens_round = round_tokens;
    report.tokens_cum = cum_tokens;
    return report;
}

RunLog make_log(PolicyKind policy, uint64_t seed, const std::string& base_digest, int total_rounds,
                std::vector<RoundReport> reports) {
    RunConfig config;
    config.corpus_path = "corpus.jsonl";
    config.policies = {policy};
    config.seeds = {seed};
    config.R = total_rounds;

    RunLog log;
    log.meta.policy = policy;
    log.meta.seed = seed;
    log.meta.base_digest = base_digest;
    log.meta.corpus_digest = "corpus";
    log.meta.backend_id = "sim";
    log.meta.config = config.to_json();
    log.reports = std::move(reports);
    log.last_complete_round = static_cast<int>(log.reports.size());
    return log;
}

// One log whose per-round coverages and token cells grow linearly, enough
// structure for fold checks without a real run.
RunLog linear_log(PolicyKind policy, uint64_t seed, const std::string& digest, int rounds,
                  double final_coverage) {
    std::vector<RoundReport> reports;
    TokenCounts cum;
    for (int r = 1; r <= rounds; ++r) {
        TokenCounts spent{100 * r, 10 * r, r};
        cum += spent;
        double coverage = final_coverage * r / rounds;
        reports.push_back(make_report(r, coverage, spent, cum));
    }
    return make_log(policy, seed, digest, rounds, std::move(reports));
}

Question sim_question(const std::string& id, double p0, const std::vector<double>& embedding) {
    Question q = ttc_test::make_math_question(id, "Compute the value of " + id + ".", "7");
    q.metadata["sim_p0"] = nlohmann::json(p0).dump();
    ttc_test::set_embedding(q, embedding);
    return q;
}

}  // namespace

TEST_CASE("four seeds with known coverages reproduce mean and band") {
    std::vector<double> coverages = {0.50, 0.52, 0.48, 0.50};
    std::vector<RunLog> logs;
    for (size_t i = 0; i < coverages.size(); ++i) {
        std::vector<RoundReport> reports = {
            make_report(1, 0.25, TokenCounts{100, 50, 0}, TokenCounts{100, 50, 0}),
            make_report(2, coverages[i], TokenCounts{100, 50, 0}, TokenCounts{200, 100, 0}),
        };
        logs.push_back(make_log(PolicyKind::elimination, i + 1, "digest-a", 2,
                                std::move(reports)));
    }

    PolicyAggregate agg = aggregate_report(logs);
    REQUIRE(agg.rounds.size() == 2);
    CHECK(agg.policy == PolicyKind::elimination);
    CHECK((agg.seeds == std::vector<uint64_t>{1, 2, 3, 4}));

    CHECK(agg.rounds[0].mean_coverage == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(agg.rounds[0].coverage_half_std == doctest::Approx(0.0).epsilon(1e-12));

    CHECK(agg.rounds[1].mean_coverage == doctest::Approx(0.500).epsilon(1e-12));
    CHECK(std::abs(agg.rounds[1].coverage_half_std - 0.008164965809277259) < 1e-9);

    CHECK(agg.rounds[0].mean_round_tokens == doctest::Approx(150.0));
    CHECK(agg.rounds[1].mean_cum_prompt == doctest::Approx(200.0));
    CHECK(agg.rounds[1].mean_cum_output == doctest::Approx(100.0));
}

TEST_CASE("a single log aggregates with a zero-width band") {
    std::vector<RunLog> logs = {linear_log(PolicyKind::uniform, 9, "digest-a", 3, 0.9)};
    PolicyAggregate agg = aggregate_report(logs);
    REQUIRE(agg.rounds.size() == 3);
    for (const RoundAggregate& round : agg.rounds) {
        CHECK(round.coverage_half_std == 0.0);
    }
    CHECK(agg.rounds[2].mean_coverage == doctest::Approx(0.9));
}

TEST_CASE("aggregation rejects mismatched inputs") {
    CHECK_THROWS_AS(aggregate_report({}), Error);

    std::vector<RunLog> mixed_digest = {
        linear_log(PolicyKind::elimination, 1, "digest-a", 2, 0.5),
        linear_log(PolicyKind::elimination, 2, "digest-b", 2, 0.5),
    };
    CHECK_THROWS_AS(aggregate_report(mixed_digest), Error);

    std::vector<RunLog> mixed_policy = {
        linear_log(PolicyKind::elimination, 1, "digest-a", 2, 0.5),
        linear_log(PolicyKind::uniform, 2, "digest-a", 2, 0.5),
    };
    CHECK_THROWS_AS(aggregate_report(mixed_policy), Error);
}

TEST_CASE("early-stopped runs carry final values forward and spend nothing") {
    RunLog full = linear_log(PolicyKind::uniform, 1, "digest-a", 3, 0.9);
    RunLog stopped = linear_log(PolicyKind::uniform, 2, "digest-a", 3, 0.9);
    stopped.reports.pop_back();  // budget stop after round 2

    PolicyAggregate agg = aggregate_report({full, stopped});
    REQUIRE(agg.rounds.size() == 3);

    // Round 2 is executed by both.
    CHECK(agg.rounds[1].mean_round_tokens == doctest::Approx(2.0 * (200 + 20 + 2) / 2.0));

    // Round 3: only the full run spends; the stopped run keeps its round-2
    // coverage and cumulative totals.
    double full_r3_cov = 0.9;
    double stopped_final_cov = 0.9 * 2 / 3;
    CHECK(agg.rounds[2].mean_coverage ==
          doctest::Approx((full_r3_cov + stopped_final_cov) / 2.0).epsilon(1e-12));
    CHECK(agg.rounds[2].mean_round_tokens == doctest::Approx((300 + 30 + 3) / 2.0));
    double full_cum_prompt = 100 + 200 + 300;
    double stopped_cum_prompt = 100 + 200;
    CHECK(agg.rounds[2].mean_cum_prompt ==
          doctest::Approx((full_cum_prompt + stopped_cum_prompt) / 2.0));
}

TEST_CASE("curves csv emits one row per executed round") {
    RunLog log = linear_log(PolicyKind::evolve_similar, 7, "digest-a", 2, 0.5);
    std::string csv = curves_csv({log});
    std::string expected =
        "policy,seed,round,coverage,output_tokens_cum,prompt_tokens_cum,thinking_tokens_cum\n"
        "evolve_similar,7,1,0.25,10,100,1\n"
        "evolve_similar,7,2,0.5,30,300,3\n";
    CHECK(csv == expected);
}

TEST_CASE("round table renders percent cells with zero-based labels") {
    std::vector<RunLog> logs = {
        linear_log(PolicyKind::elimination, 1, "digest-a", 2, 0.8),
        linear_log(PolicyKind::elimination, 2, "digest-a", 2, 0.8),
    };
    PolicyAggregate agg = aggregate_report(logs);
    std::string table = round_table({agg});

    CHECK(table.find("Method") != std::string::npos);
    CHECK(table.find("R0") != std::string::npos);
    CHECK(table.find("R1") != std::string::npos);
    CHECK(table.find("R2") == std::string::npos);
    CHECK(table.find("elimination") != std::string::npos);
    CHECK(table.find("80.0 ±0.0") != std::string::npos);
}

TEST_CASE("token comparison subtracts per round and in total") {
    auto with_round_tokens = [](PolicyKind policy, std::vector<double> per_round) {
        PolicyAggregate agg;
        agg.policy = policy;
        agg.base_digest = "digest-a";
        for (size_t r = 0; r < per_round.size(); ++r) {
            RoundAggregate round;
            round.round = static_cast<int>(r + 1);
            round.mean_round_tokens = per_round[r];
            agg.rounds.push_back(round);
        }
        return agg;
    };

    PolicyAggregate baseline = with_round_tokens(
        PolicyKind::elimination, {2025345, 1680173, 1308144, 1249419});
    PolicyAggregate ours = with_round_tokens(
        PolicyKind::evolve_similar, {2025345, 1102486, 902109, 741611});

    TokenComparison cmp = compare_tokens(baseline, ours);
    REQUIRE(cmp.savings.size() == 4);
    CHECK(cmp.savings[0] == doctest::Approx(0.0));
    CHECK(cmp.savings[1] == doctest::Approx(577687.0));
    CHECK(cmp.baseline_total == doctest::Approx(6263081.0));
    CHECK(cmp.ours_total == doctest::Approx(4771551.0));
    CHECK(cmp.savings_total == doctest::Approx(1491530.0));

    std::string table = token_table(cmp, "elimination", "evolve_similar");
    CHECK(table.find("Total") != std::string::npos);
    CHECK(table.find("2,025,345") != std::string::npos);
    CHECK(table.find("6,263,081") != std::string::npos);
    CHECK(table.find("4,771,551") != std::string::npos);
    CHECK(table.find("1,491,530") != std::string::npos);
    CHECK(table.find("Savings") != std::string::npos);

    PolicyAggregate foreign = with_round_tokens(PolicyKind::uniform, {1.0});
    foreign.base_digest = "digest-b";
    CHECK_THROWS_AS(compare_tokens(baseline, foreign), Error);
}

TEST_CASE("aggregating live runs matches a hand fold of their reports") {
    RunConfig config;
    config.corpus_path = "corpus.jsonl";
    config.policies = {PolicyKind::elimination};
    config.seeds = {1, 2};
    config.R = 3;
    config.K = 2;
    config.sim.alpha = 0.0;

    std::vector<Question> questions;
    for (int i = 0; i < 4; ++i) {
        questions.push_back(sim_question("q" + std::to_string(i + 1), 0.35 + 0.1 * i,
                                         {1.0, static_cast<double>(i)}));
    }
    QuestionSet corpus = QuestionSet::from_questions(std::move(questions));
    MetadataEmbedder embedder;
    EmbeddingStore store = EmbeddingStore::build(corpus, embedder);
    SimParams params{config.sim.alpha, config.sim.tau, config.sim.eta,
                     config.decoding.temperature};
    SimBackend backend(corpus, store, sim_profiles_from_corpus(corpus, config.sim.defaults),
                       params);
    GroundTruthGrader grader(config.gamma);
    RunEnv env;
    env.backend = &backend;
    env.op_grader = &grader;
    env.eval_grader = &grader;
    env.embeddings = &store;
    env.embedder_id = "metadata";

    std::vector<RunLog> logs;
    for (uint64_t seed : {1, 2}) {
        logs.push_back(run_experiment(config, corpus, PolicyKind::elimination, seed, env));
    }

    PolicyAggregate agg = aggregate_report(logs);
    REQUIRE(agg.rounds.size() == 3);
    for (int r = 1; r <= 3; ++r) {
        const RoundAggregate& cell = agg.rounds[r - 1];
        double cov_sum = 0.0;
        double spent_sum = 0.0;
        for (const RunLog& log : logs) {
            const RoundReport& report = log.reports[r - 1];
            cov_sum += report.coverage;
            spent_sum += static_cast<double>(report.tokens_round.total());
        }
        CHECK(cell.mean_coverage == doctest::Approx(cov_sum / 2.0).epsilon(1e-12));
        CHECK(cell.mean_round_tokens == doctest::Approx(spent_sum / 2.0).epsilon(1e-12));
    }

    // CSV rows match the reports line for line.
    std::string csv = curves_csv(logs);
    size_t rows = 0;
    for (char c : csv) rows += c == '\n';
    CHECK(rows == 1 + 6);
}
