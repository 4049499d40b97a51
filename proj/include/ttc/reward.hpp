#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ttc/corpus.hpp"
#include "ttc/generation.hpp"
#include "ttc/record.hpp"

namespace ttc {

struct RewardOutcome {
    double score = 0.0;
    bool solved = false;  // score >= gamma, always
    std::string grader_id;
};

RewardOutcome make_outcome(double score, double gamma, std::string grader_id);

// Identifies one grading event so noise streams replay deterministically.
struct GradeKey {
    uint64_t run_seed = 0;
    int round = 0;
    int sample_index = 0;
};

class Grader {
public:
    virtual ~Grader() = default;
    virtual std::string id() const = 0;
    virtual RewardOutcome grade(const Question& question, const std::string& response_text,
                                const GradeKey& key) = 0;
};

// score 1 iff the normalized extracted answer equals the normalized ground
// truth; extraction absence scores 0. Not for code questions.
RewardOutcome grade_exact(const Question& question, const std::string& response_text,
                          double gamma);

struct SandboxLimits {
    double wall_time_s = 10.0;
    long long memory_bytes = 512ll * 1024 * 1024;
    size_t max_output_bytes = 1024 * 1024;
};

struct SandboxResult {
    std::string stdout_text;
    int exit_status = -1;
    bool timed_out = false;
    bool output_truncated = false;
};

// Runs untrusted Python in a separate process with enforced wall-clock,
// address-space, and output limits. Throws GradingError when the runner
// itself cannot execute (grading must never silently pass).
class SandboxRunner {
public:
    explicit SandboxRunner(std::string python_path = "python3");

    SandboxResult run(const std::string& program_text, const std::string& stdin_text,
                      const SandboxLimits& limits);

private:
    std::string python_path_;
};

// score 1 iff the program reproduces expected stdout for every test case
// (trailing whitespace per line and trailing blank lines ignored).
RewardOutcome grade_code(const Question& question, const std::string& program_text,
                         const SandboxLimits& limits, SandboxRunner& sandbox, double gamma);

// Ground-truth grading dispatched by task family: code runs in the sandbox,
// everything else is exact string matching.
class GroundTruthGrader : public Grader {
public:
    GroundTruthGrader(double gamma, SandboxRunner* sandbox = nullptr,
                      SandboxLimits limits = {});

    std::string id() const override { return "ground_truth"; }
    RewardOutcome grade(const Question& question, const std::string& response_text,
                        const GradeKey& key) override;

private:
    double gamma_;
    SandboxRunner* sandbox_;
    SandboxLimits limits_;
};

// Binary verdict from an external judge model. The judging prompt is fixed;
// unparseable verdicts score 0 and bump the warning counter.
class ModelGrader : public Grader {
public:
    ModelGrader(std::shared_ptr<GenerationBackend> judge, double gamma,
                DecodingParams params = judge_decoding_params());

    static DecodingParams judge_decoding_params();
    static std::string judge_prompt(const Question& question, const std::string& response_text);

    std::string id() const override;
    RewardOutcome grade(const Question& question, const std::string& response_text,
                        const GradeKey& key) override;

    size_t warnings() const { return warnings_; }

private:
    std::shared_ptr<GenerationBackend> judge_;
    double gamma_;
    DecodingParams params_;
    std::atomic<size_t> warnings_{0};
};

// Flips the inner binary score with probability flip_prob, decided by a
// dedicated stream derived from (run seed, question id, round, sample), so
// replays and parallel issue see identical noise.
class NoisyGrader : public Grader {
public:
    NoisyGrader(Grader& inner, double flip_prob, double gamma);

    std::string id() const override;
    RewardOutcome grade(const Question& question, const std::string& response_text,
                        const GradeKey& key) override;

    size_t flips() const { return flips_; }

private:
    Grader* inner_;
    double flip_prob_;
    double gamma_;
    std::atomic<size_t> flips_{0};
};

// Modal canonical answer among the responses, returned with its fraction of
// ALL responses (unextractable ones included) iff that fraction reaches the
// threshold. Ties go to the lexicographically smallest answer.
std::optional<std::pair<std::string, double>> consensus_select(
    const std::vector<ResponseRecord>& responses, double threshold, TaskFamily family);

}  // namespace ttc
