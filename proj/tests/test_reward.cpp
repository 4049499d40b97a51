#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "support/helpers.hpp"
#include "ttc/corpus.hpp"
#include "ttc/error.hpp"
#include "ttc/generation.hpp"
#include "ttc/reward.hpp"
#include "ttc/rng.hpp"

using namespace ttc;
using ttc_test::make_math_question;

namespace {

Question make_code_question(std::string id, std::vector<CodeTestCase> cases) {
    Question q;
    q.id = std::move(id);
    q.task_family = TaskFamily::code;
    q.text = "Transform stdin to stdout.";
    q.test_cases = std::move(cases);
    return q;
}

Question make_mcq_question(std::string id, std::string gt) {
    Question q;
    q.id = std::move(id);
    q.task_family = TaskFamily::mcq;
    q.text = "Pick one.";
    q.choices = {"one", "two", "three", "four"};
    q.ground_truth = std::move(gt);
    return q;
}

ResponseRecord response_with_text(std::string text) {
    ResponseRecord r;
    r.question_id = "q1";
    r.text = std::move(text);
    return r;
}

// Records every call so tests can assert on the exact prompt, decoding
// parameters, and derived seed the grader hands to the judge.
class ScriptedJudge : public GenerationBackend {
public:
    explicit ScriptedJudge(std::vector<std::string> replies) : replies_(std::move(replies)) {}

    std::string id() const override { return "scripted-judge"; }

    GenerationResult generate(const PromptSpec& prompt, const DecodingParams& params,
                              SeededRng& rng) override {
        prompts.push_back(prompt);
        params_seen.push_back(params);
        seeds.push_back(rng.seed());
        GenerationResult result;
        result.text = replies_[std::min(prompts.size() - 1, replies_.size() - 1)];
        result.backend_id = id();
        result.prompt_tokens = 10;
        result.output_tokens = 1;
        return result;
    }

    std::vector<PromptSpec> prompts;
    std::vector<DecodingParams> params_seen;
    std::vector<uint64_t> seeds;

private:
    std::vector<std::string> replies_;
};

class ConstantGrader : public Grader {
public:
    ConstantGrader(double score, double gamma) : score_(score), gamma_(gamma) {}
    std::string id() const override { return "constant"; }
    RewardOutcome grade(const Question&, const std::string&, const GradeKey&) override {
        return make_outcome(score_, gamma_, id());
    }

private:
    double score_;
    double gamma_;
};

constexpr const char* kEchoProgram = "import sys\nsys.stdout.write(sys.stdin.read())\n";

}  // namespace

TEST_CASE("outcome solved flag tracks the threshold inclusively") {
    CHECK(make_outcome(1.0, 1.0, "g").solved);
    CHECK_FALSE(make_outcome(0.999, 1.0, "g").solved);
    CHECK(make_outcome(0.5, 0.5, "g").solved);
    CHECK(make_outcome(0.0, 0.0, "g").solved);
    CHECK(make_outcome(1.0, 1.0, "g").grader_id == "g");
}

TEST_CASE("exact grading matches the normalized boxed answer") {
    Question q = make_math_question("q1", "What is 3+4?", "7");

    RewardOutcome hit = grade_exact(q, "Adding gives \\boxed{7}.", 1.0);
    CHECK(hit.score == 1.0);
    CHECK(hit.solved);
    CHECK(hit.grader_id == "exact");

    RewardOutcome miss = grade_exact(q, "Adding gives \\boxed{8}.", 1.0);
    CHECK(miss.score == 0.0);
    CHECK_FALSE(miss.solved);

    RewardOutcome unboxed = grade_exact(q, "The answer is seven.", 1.0);
    CHECK(unboxed.score == 0.0);
    CHECK_FALSE(unboxed.solved);
}

TEST_CASE("exact grading normalizes both sides") {
    Question padded = make_math_question("q1", "t", "  007 ");
    CHECK(grade_exact(padded, "\\boxed{7}", 1.0).score == 1.0);
    CHECK(grade_exact(padded, "\\boxed{$7$}", 1.0).score == 1.0);

    Question mcq = make_mcq_question("m1", "b");
    CHECK(grade_exact(mcq, "\\boxed{B}", 1.0).score == 1.0);
    CHECK(grade_exact(mcq, "\\boxed{C}", 1.0).score == 0.0);
}

TEST_CASE("exact grading of raw and pre-normalized ground truth agree") {
    std::vector<std::string> truths = {"7", " 7 ", "$7$", "\\text{7}", "007", "x + 1",
                                       "$x + 1$", "  spaced   out  "};
    std::vector<std::string> responses = {"\\boxed{7}",     "\\boxed{007}", "\\boxed{x + 1}",
                                          "\\boxed{x+1}",   "no box",       "\\boxed{spaced out}",
                                          "\\boxed{$7$}"};
    for (const std::string& truth : truths) {
        Question raw = make_math_question("q1", "t", truth);
        Question canon =
            make_math_question("q1", "t", normalize_answer(truth, TaskFamily::free_math));
        for (const std::string& response : responses) {
            CHECK(grade_exact(raw, response, 1.0).score ==
                  grade_exact(canon, response, 1.0).score);
        }
    }
}

TEST_CASE("exact grading refuses code questions") {
    Question q = make_code_question("c1", {{"1\n", "1\n"}});
    CHECK_THROWS_AS(grade_exact(q, "print(1)", 1.0), GradingError);
}

TEST_CASE("sandbox runs a program and captures stdout") {
    SandboxRunner sandbox;
    SandboxLimits limits;
    SandboxResult result = sandbox.run(kEchoProgram, "5\n", limits);
    CHECK(result.exit_status == 0);
    CHECK_FALSE(result.timed_out);
    CHECK_FALSE(result.output_truncated);
    CHECK(result.stdout_text == "5\n");
}

TEST_CASE("sandbox pumps stdin larger than a pipe buffer") {
    SandboxRunner sandbox;
    SandboxLimits limits;
    std::string big(256 * 1024, 'x');
    big += "\n";
    SandboxResult result = sandbox.run(kEchoProgram, big, limits);
    CHECK(result.exit_status == 0);
    CHECK(result.stdout_text == big);
}

TEST_CASE("sandbox reports nonzero exits and swallows stderr") {
    SandboxRunner sandbox;
    SandboxLimits limits;

    SandboxResult exit3 = sandbox.run("import sys\nsys.exit(3)\n", "", limits);
    CHECK(exit3.exit_status == 3);
    CHECK_FALSE(exit3.timed_out);

    SandboxResult crash = sandbox.run("raise RuntimeError('boom')\n", "", limits);
    CHECK(crash.exit_status != 0);
    CHECK(crash.stdout_text.empty());
}

TEST_CASE("sandbox kills programs at the wall-time limit") {
    SandboxRunner sandbox;
    SandboxLimits limits;
    limits.wall_time_s = 0.5;
    SandboxResult result = sandbox.run("while True:\n    pass\n", "", limits);
    CHECK(result.timed_out);
    CHECK(result.exit_status != 0);
}

TEST_CASE("sandbox caps captured output") {
    SandboxRunner sandbox;
    SandboxLimits limits;
    limits.max_output_bytes = 1000;
    SandboxResult result = sandbox.run("print('y' * 100000)\n", "", limits);
    CHECK(result.output_truncated);
    CHECK(result.stdout_text.size() <= 1000);
}

TEST_CASE("sandbox with a bogus interpreter raises instead of passing") {
    SandboxRunner sandbox("definitely-not-a-python-binary");
    SandboxLimits limits;
    CHECK_THROWS_AS(sandbox.run(kEchoProgram, "", limits), GradingError);
}

TEST_CASE("code grading passes the echo program on an echo case") {
    SandboxRunner sandbox;
    Question q = make_code_question("c1", {{"5\n", "5"}});
    RewardOutcome outcome = grade_code(q, kEchoProgram, {}, sandbox, 1.0);
    CHECK(outcome.score == 1.0);
    CHECK(outcome.solved);
    CHECK(outcome.grader_id == "code");
}

TEST_CASE("code grading is insensitive to trailing whitespace only") {
    SandboxRunner sandbox;
    Question q = make_code_question("c1", {{"", "a\nb"}});

    std::string trailing = "import sys\nsys.stdout.write('a  \\nb\\n\\n')\n";
    CHECK(grade_code(q, trailing, {}, sandbox, 1.0).score == 1.0);

    std::string leading = "import sys\nsys.stdout.write('  a\\nb\\n')\n";
    CHECK(grade_code(q, leading, {}, sandbox, 1.0).score == 0.0);
}

TEST_CASE("code grading fails when any case times out") {
    SandboxRunner sandbox;
    SandboxLimits limits;
    limits.wall_time_s = 0.5;
    Question q = make_code_question("c1", {{"1\n", "1"}});
    std::string spin = "while True:\n    pass\n";
    CHECK(grade_code(q, spin, limits, sandbox, 1.0).score == 0.0);
}

TEST_CASE("code grading requires every case to pass") {
    SandboxRunner sandbox;
    // Doubles its input, so it passes 1->2 and 3->6 but fails 5->11.
    std::string doubler = "import sys\nprint(2 * int(sys.stdin.read()))\n";
    Question two_of_three =
        make_code_question("c1", {{"1\n", "2\n"}, {"3\n", "6\n"}, {"5\n", "11\n"}});
    CHECK(grade_code(two_of_three, doubler, {}, sandbox, 1.0).score == 0.0);

    Question all_three =
        make_code_question("c2", {{"1\n", "2\n"}, {"3\n", "6\n"}, {"5\n", "10\n"}});
    CHECK(grade_code(all_three, doubler, {}, sandbox, 1.0).score == 1.0);
}

TEST_CASE("code grading rejects non-code questions") {
    SandboxRunner sandbox;
    Question q = make_math_question("q1", "t", "7");
    CHECK_THROWS_AS(grade_code(q, kEchoProgram, {}, sandbox, 1.0), GradingError);
}

TEST_CASE("ground-truth grader dispatches by task family") {
    GradeKey key;
    SandboxRunner sandbox;
    GroundTruthGrader with_sandbox(1.0, &sandbox);
    CHECK(with_sandbox.id() == "ground_truth");

    Question math = make_math_question("q1", "t", "7");
    CHECK(with_sandbox.grade(math, "\\boxed{7}", key).score == 1.0);
    CHECK(with_sandbox.grade(math, "\\boxed{8}", key).score == 0.0);

    Question code = make_code_question("c1", {{"5\n", "5\n"}});
    std::string fenced = "```python\nimport sys\nsys.stdout.write(sys.stdin.read())\n```";
    CHECK(with_sandbox.grade(code, fenced, key).score == 1.0);
    CHECK(with_sandbox.grade(code, "", key).score == 0.0);

    GroundTruthGrader without_sandbox(1.0);
    CHECK(without_sandbox.grade(math, "\\boxed{7}", key).score == 1.0);
    CHECK_THROWS_AS(without_sandbox.grade(code, fenced, key), GradingError);
}

TEST_CASE("model grader parses binary verdicts") {
    Question q = make_math_question("q1", "What is 3+4?", "7");
    GradeKey key{5, 2, 0};

    auto correct = std::make_shared<ScriptedJudge>(std::vector<std::string>{"CORRECT"});
    ModelGrader grader(correct, 1.0);
    CHECK(grader.id() == "judge:scripted-judge");
    RewardOutcome outcome = grader.grade(q, "\\boxed{7}", key);
    CHECK(outcome.score == 1.0);
    CHECK(outcome.solved);
    CHECK(outcome.grader_id == "judge:scripted-judge");
    CHECK(grader.warnings() == 0);

    auto wordy = std::make_shared<ScriptedJudge>(
        std::vector<std::string>{"The answer is CORRECT."});
    CHECK(ModelGrader(wordy, 1.0).grade(q, "x", key).score == 1.0);

    auto incorrect = std::make_shared<ScriptedJudge>(std::vector<std::string>{"INCORRECT"});
    CHECK(ModelGrader(incorrect, 1.0).grade(q, "x", key).score == 0.0);

    // INCORRECT embeds the substring CORRECT; the negative reading wins.
    auto tricky = std::make_shared<ScriptedJudge>(
        std::vector<std::string>{"Verdict: INCORRECT"});
    CHECK(ModelGrader(tricky, 1.0).grade(q, "x", key).score == 0.0);
}

TEST_CASE("model grader scores unparseable verdicts zero with a warning") {
    Question q = make_math_question("q1", "t", "7");
    auto vague = std::make_shared<ScriptedJudge>(std::vector<std::string>{"maybe?"});
    ModelGrader grader(vague, 1.0);
    RewardOutcome outcome = grader.grade(q, "x", GradeKey{});
    CHECK(outcome.score == 0.0);
    CHECK_FALSE(outcome.solved);
    CHECK(grader.warnings() == 1);
    grader.grade(q, "y", GradeKey{});
    CHECK(grader.warnings() == 2);
}

TEST_CASE("model grader sends a fixed prompt with deterministic seed and decoding") {
    Question q = make_math_question("q1", "What is 3+4?", "7");
    auto judge = std::make_shared<ScriptedJudge>(std::vector<std::string>{"CORRECT"});
    ModelGrader grader(judge, 1.0);
    GradeKey key{5, 2, 1};
    grader.grade(q, "I think \\boxed{7}", key);

    REQUIRE(judge->prompts.size() == 1);
    const PromptSpec& sent = judge->prompts[0];
    CHECK(sent.rendered_text == ModelGrader::judge_prompt(q, "I think \\boxed{7}"));
    CHECK(sent.rendered_text.find("What is 3+4?") != std::string::npos);
    CHECK(sent.rendered_text.find("Reference answer:\n7") != std::string::npos);
    CHECK(sent.rendered_text.find("I think \\boxed{7}") != std::string::npos);
    CHECK(sent.rendered_text.find("CORRECT or INCORRECT") != std::string::npos);
    CHECK(sent.target_question_id == "q1");

    CHECK(judge->params_seen[0].temperature == 0.0);
    CHECK(judge->params_seen[0].max_output_tokens == 64);

    CHECK(judge->seeds[0] == derive_seed(5, "s5/judge/q=q1/r=2/k=1"));

    grader.grade(q, "I think \\boxed{7}", key);
    CHECK(judge->seeds[1] == judge->seeds[0]);
    grader.grade(q, "I think \\boxed{7}", GradeKey{5, 3, 1});
    CHECK(judge->seeds[2] != judge->seeds[0]);
}

TEST_CASE("model grader prompt cites code test cases as the reference") {
    Question q = make_code_question("c1", {{"5\n", "10\n"}});
    std::string prompt = ModelGrader::judge_prompt(q, "print(2 * int(input()))");
    CHECK(prompt.find("Input:\n5") != std::string::npos);
    CHECK(prompt.find("Expected output:\n10") != std::string::npos);
}

TEST_CASE("noisy wrapper validates the flip probability") {
    ConstantGrader inner(1.0, 1.0);
    CHECK_THROWS_AS(NoisyGrader(inner, 1.0, 1.0), ConfigError);
    CHECK_THROWS_AS(NoisyGrader(inner, -0.1, 1.0), ConfigError);
    CHECK_NOTHROW(NoisyGrader(inner, 0.0, 1.0));
    CHECK_NOTHROW(NoisyGrader(inner, 0.999, 1.0));
}

TEST_CASE("noisy wrapper with zero flip probability scores like the inner grader") {
    Question q = make_math_question("q1", "t", "7");
    GroundTruthGrader inner(1.0);
    NoisyGrader noisy(inner, 0.0, 1.0);
    CHECK(noisy.id() == "noisy(ground_truth)");

    for (int k = 0; k < 50; ++k) {
        GradeKey key{9, 1, k};
        std::string text = k % 2 == 0 ? "\\boxed{7}" : "\\boxed{8}";
        RewardOutcome plain = inner.grade(q, text, key);
        RewardOutcome wrapped = noisy.grade(q, text, key);
        CHECK(wrapped.score == plain.score);
        CHECK(wrapped.solved == plain.solved);
    }
    CHECK(noisy.flips() == 0);
}

TEST_CASE("noisy wrapper replays the same flip decision for the same key") {
    Question q = make_math_question("q1", "t", "7");
    ConstantGrader inner(1.0, 1.0);
    NoisyGrader noisy(inner, 0.5, 1.0);
    for (int k = 0; k < 20; ++k) {
        GradeKey key{3, 2, k};
        RewardOutcome first = noisy.grade(q, "x", key);
        RewardOutcome second = noisy.grade(q, "x", key);
        CHECK(first.score == second.score);
        CHECK(first.solved == second.solved);
    }
}

TEST_CASE("noisy wrapper flips are independent across questions rounds and samples") {
    ConstantGrader inner(1.0, 1.0);
    NoisyGrader noisy(inner, 0.5, 1.0);
    Question a = make_math_question("qa", "t", "7");
    Question b = make_math_question("qb", "t", "7");

    // With p = 0.5 the four (question, round) cells below almost surely
    // disagree somewhere; all-equal would mean the key is ignored.
    std::vector<double> scores;
    for (int round = 1; round <= 8; ++round) {
        scores.push_back(noisy.grade(a, "x", GradeKey{1, round, 0}).score);
        scores.push_back(noisy.grade(b, "x", GradeKey{1, round, 0}).score);
    }
    CHECK(std::count(scores.begin(), scores.end(), scores[0]) <
          static_cast<long>(scores.size()));
}

TEST_CASE("noisy wrapper flip fraction stays inside the 99 percent binomial interval") {
    // For p = 0.05 and n = 10,000 the 99% interval is p ± 2.576·sqrt(p(1−p)/n),
    // i.e. [0.04439, 0.05561].
    ConstantGrader inner(1.0, 1.0);
    NoisyGrader noisy(inner, 0.05, 1.0);
    Question q = make_math_question("q1", "t", "7");

    const int n = 10000;
    int flipped = 0;
    for (int i = 0; i < n; ++i) {
        GradeKey key{11, 1 + i / 100, i % 100};
        if (noisy.grade(q, "x", key).score == 0.0) ++flipped;
    }
    double fraction = static_cast<double>(flipped) / n;
    CHECK(fraction >= 0.04439);
    CHECK(fraction <= 0.05561);
    CHECK(noisy.flips() == static_cast<size_t>(flipped));
}

TEST_CASE("noisy wrapper preserves the marginal expectation") {
    // E[flipped] = (1−2p)·E[inner] + p; with inner ≡ 1 and p = 0.2 this is 0.8,
    // with inner ≡ 0 it is 0.2. Monte-Carlo over distinct keys.
    Question q = make_math_question("q1", "t", "7");
    const int n = 20000;
    double p = 0.2;

    for (double inner_score : {1.0, 0.0}) {
        ConstantGrader inner(inner_score, 1.0);
        NoisyGrader noisy(inner, p, 1.0);
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            total += noisy.grade(q, "x", GradeKey{17, 1 + i / 500, i % 500}).score;
        }
        double expected = (1.0 - 2.0 * p) * inner_score + p;
        CHECK(std::abs(total / n - expected) < 0.01);
    }
}

TEST_CASE("noisy wrapper recomputes solved from the flipped score") {
    Question q = make_math_question("q1", "t", "7");
    ConstantGrader inner(1.0, 1.0);
    NoisyGrader noisy(inner, 0.999, 1.0);
    // With p = 0.999, at least one of 50 keys flips; flipped outcomes must
    // report solved = false under gamma = 1.
    bool saw_flip = false;
    for (int k = 0; k < 50; ++k) {
        RewardOutcome outcome = noisy.grade(q, "x", GradeKey{23, 1, k});
        if (outcome.score == 0.0) {
            saw_flip = true;
            CHECK_FALSE(outcome.solved);
            CHECK(outcome.grader_id == "noisy(constant)");
        }
    }
    CHECK(saw_flip);
}

TEST_CASE("consensus requires the modal answer to reach the threshold") {
    std::vector<ResponseRecord> responses;
    for (int i = 0; i < 6; ++i) responses.push_back(response_with_text("\\boxed{A}"));
    responses.push_back(response_with_text("\\boxed{B}"));
    responses.push_back(response_with_text("\\boxed{C}"));

    auto six_of_eight = consensus_select(responses, 0.75, TaskFamily::mcq);
    REQUIRE(six_of_eight.has_value());
    CHECK(six_of_eight->first == "A");
    CHECK(six_of_eight->second == doctest::Approx(0.75));

    responses[5].text = "\\boxed{D}";
    CHECK_FALSE(consensus_select(responses, 0.75, TaskFamily::mcq).has_value());
}

TEST_CASE("consensus on an empty pool is absent") {
    CHECK_FALSE(consensus_select({}, 0.75, TaskFamily::mcq).has_value());
}

TEST_CASE("consensus counts unextractable responses in the denominator") {
    std::vector<ResponseRecord> responses;
    for (int i = 0; i < 6; ++i) responses.push_back(response_with_text("\\boxed{A}"));
    responses.push_back(response_with_text("I cannot decide."));
    responses.push_back(response_with_text("Still thinking..."));
    auto result = consensus_select(responses, 0.75, TaskFamily::mcq);
    REQUIRE(result.has_value());
    CHECK(result->first == "A");
    CHECK(result->second == doctest::Approx(0.75));

    responses.push_back(response_with_text("No idea either."));
    CHECK_FALSE(consensus_select(responses, 0.75, TaskFamily::mcq).has_value());

    std::vector<ResponseRecord> hopeless(4, response_with_text("???"));
    CHECK_FALSE(consensus_select(hopeless, 0.75, TaskFamily::mcq).has_value());
}

TEST_CASE("consensus canonicalizes answers before counting") {
    std::vector<ResponseRecord> responses;
    responses.push_back(response_with_text("\\boxed{7}"));
    responses.push_back(response_with_text("\\boxed{007}"));
    responses.push_back(response_with_text("\\boxed{$7$}"));
    responses.push_back(response_with_text("\\boxed{8}"));
    auto result = consensus_select(responses, 0.75, TaskFamily::free_math);
    REQUIRE(result.has_value());
    CHECK(result->first == "7");
    CHECK(result->second == doctest::Approx(0.75));
}

TEST_CASE("consensus validates the threshold range") {
    std::vector<ResponseRecord> responses(1, response_with_text("\\boxed{A}"));
    CHECK_THROWS_AS(consensus_select(responses, 0.5, TaskFamily::mcq), ConfigError);
    CHECK_THROWS_AS(consensus_select(responses, 0.0, TaskFamily::mcq), ConfigError);
    CHECK_THROWS_AS(consensus_select(responses, 1.01, TaskFamily::mcq), ConfigError);
    CHECK(consensus_select(responses, 1.0, TaskFamily::mcq).has_value());
}

TEST_CASE("consensus is monotone in the threshold") {
    RngStream rng(404);
    const char* letters[] = {"A", "B", "C", "D"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ResponseRecord> responses;
        size_t n = 1 + rng.uniform_below(10);
        for (size_t i = 0; i < n; ++i) {
            if (rng.bernoulli(0.15)) {
                responses.push_back(response_with_text("unextractable"));
            } else {
                size_t pick = rng.uniform_below(4);
                responses.push_back(
                    response_with_text(std::string("\\boxed{") + letters[pick] + "}"));
            }
        }
        auto low = consensus_select(responses, 0.6, TaskFamily::mcq);
        auto mid = consensus_select(responses, 0.75, TaskFamily::mcq);
        auto high = consensus_select(responses, 0.9, TaskFamily::mcq);
        if (!low.has_value()) CHECK_FALSE(mid.has_value());
        if (!mid.has_value()) CHECK_FALSE(high.has_value());
        if (mid.has_value()) {
            REQUIRE(low.has_value());
            CHECK(low->first == mid->first);
            CHECK(low->second == mid->second);
        }
    }
}
