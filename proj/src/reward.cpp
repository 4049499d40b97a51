#include "ttc/reward.hpp"

#include <algorithm>
#include <iostream>
#include <map>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"
#include "ttc/rng.hpp"

namespace ttc {

RewardOutcome make_outcome(double score, double gamma, std::string grader_id) {
    RewardOutcome outcome;
    outcome.score = score;
    outcome.solved = score >= gamma;
    outcome.grader_id = std::move(grader_id);
    return outcome;
}

RewardOutcome grade_exact(const Question& question, const std::string& response_text,
                          double gamma) {
    if (question.task_family == TaskFamily::code) {
        throw GradingError("exact grading does not apply to code questions");
    }
    auto extracted = extract_final_answer(response_text, question.task_family);
    double score = 0.0;
    if (extracted) {
        std::string canonical = normalize_answer(*extracted, question.task_family);
        std::string truth = normalize_answer(question.ground_truth, question.task_family);
        score = canonical == truth ? 1.0 : 0.0;
    }
    return make_outcome(score, gamma, "exact");
}

namespace {

// Trailing whitespace per line and trailing blank lines carry no meaning.
std::vector<std::string> canonical_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string current;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) lines.push_back(current);
    for (std::string& line : lines) {
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t' ||
                                 line.back() == '\r')) {
            line.pop_back();
        }
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

}  // namespace

RewardOutcome grade_code(const Question& question, const std::string& program_text,
                         const SandboxLimits& limits, SandboxRunner& sandbox, double gamma) {
    if (question.task_family != TaskFamily::code) {
        throw GradingError("code grading requires a code question");
    }
    for (const CodeTestCase& tc : question.test_cases) {
        SandboxResult run = sandbox.run(program_text, tc.input, limits);
        if (run.timed_out || run.exit_status != 0 || run.output_truncated) {
            return make_outcome(0.0, gamma, "code");
        }
        if (canonical_lines(run.stdout_text) != canonical_lines(tc.expected_output)) {
            return make_outcome(0.0, gamma, "code");
        }
    }
    return make_outcome(1.0, gamma, "code");
}

GroundTruthGrader::GroundTruthGrader(double gamma, SandboxRunner* sandbox, SandboxLimits limits)
    : gamma_(gamma), sandbox_(sandbox), limits_(limits) {}

RewardOutcome GroundTruthGrader::grade(const Question& question,
                                       const std::string& response_text, const GradeKey&) {
    if (question.task_family == TaskFamily::code) {
        if (!sandbox_) {
            throw GradingError("code question \"" + question.id +
                               "\" needs a configured sandbox runner");
        }
        auto extracted = extract_final_answer(response_text, TaskFamily::code);
        if (!extracted) return make_outcome(0.0, gamma_, "code");
        return grade_code(question, *extracted, limits_, *sandbox_, gamma_);
    }
    return grade_exact(question, response_text, gamma_);
}

ModelGrader::ModelGrader(std::shared_ptr<GenerationBackend> judge, double gamma,
                         DecodingParams params)
    : judge_(std::move(judge)), gamma_(gamma), params_(params) {}

DecodingParams ModelGrader::judge_decoding_params() {
    DecodingParams params;
    params.temperature = 0.0;
    params.max_output_tokens = 64;
    return params;
}

std::string ModelGrader::judge_prompt(const Question& question,
                                      const std::string& response_text) {
    std::string reference;
    if (question.task_family == TaskFamily::code) {
        reference = "The program must map each input to the expected output.\n";
        for (const CodeTestCase& tc : question.test_cases) {
            reference += "Input:\n" + tc.input;
            if (reference.back() != '\n') reference += '\n';
            reference += "Expected output:\n" + tc.expected_output;
            if (reference.back() != '\n') reference += '\n';
        }
    } else {
        reference = question.ground_truth;
    }
    return "You are grading a candidate answer against the reference answer.\n"
           "Reply with exactly one word: CORRECT or INCORRECT.\n\n"
           "Question:\n" +
           question_prompt_body(question) +
           "\n\nReference answer:\n" + reference +
           "\n\nCandidate response:\n" + response_text + "\n\nVerdict:";
}

std::string ModelGrader::id() const { return "judge:" + judge_->id(); }

RewardOutcome ModelGrader::grade(const Question& question, const std::string& response_text,
                                 const GradeKey& key) {
    PromptSpec prompt;
    prompt.target_question_id = question.id;
    prompt.stage = PromptStage::warmup;
    prompt.template_family = question.task_family;
    prompt.rendered_text = judge_prompt(question, response_text);
    prompt.text_digest = sha256_hex(prompt.rendered_text);

    std::string path = "s" + std::to_string(key.run_seed) + "/judge/q=" + question.id +
                       "/r=" + std::to_string(key.round) + "/k=" +
                       std::to_string(key.sample_index);
    SeededRng rng(derive_seed(key.run_seed, path));
    GenerationResult verdict = judge_->generate(prompt, params_, rng);

    // INCORRECT contains CORRECT, so the negative form is checked first.
    double score;
    if (verdict.text.find("INCORRECT") != std::string::npos) {
        score = 0.0;
    } else if (verdict.text.find("CORRECT") != std::string::npos) {
        score = 1.0;
    } else {
        score = 0.0;
        ++warnings_;
        std::cerr << "warning: judge verdict for question \"" << question.id
                  << "\" was unparseable; scored 0\n";
    }
    return make_outcome(score, gamma_, id());
}

NoisyGrader::NoisyGrader(Grader& inner, double flip_prob, double gamma)
    : inner_(&inner), flip_prob_(flip_prob), gamma_(gamma) {
    if (flip_prob < 0.0 || flip_prob >= 1.0) {
        throw ConfigError("flip probability must lie in [0, 1)");
    }
}

std::string NoisyGrader::id() const {
    return "noisy(" + inner_->id() + ")";
}

RewardOutcome NoisyGrader::grade(const Question& question, const std::string& response_text,
                                 const GradeKey& key) {
    RewardOutcome outcome = inner_->grade(question, response_text, key);
    RngStream flip_stream(derive_seed(
        key.run_seed, flip_seed_path(key.run_seed, question.id, key.round, key.sample_index)));
    if (flip_stream.bernoulli(flip_prob_)) {
        outcome = make_outcome(1.0 - outcome.score, gamma_, id());
        ++flips_;
    } else {
        outcome.grader_id = id();
        outcome.solved = outcome.score >= gamma_;
    }
    return outcome;
}

std::optional<std::pair<std::string, double>> consensus_select(
    const std::vector<ResponseRecord>& responses, double threshold, TaskFamily family) {
    if (threshold <= 0.5 || threshold > 1.0) {
        throw ConfigError("consensus threshold must lie in (0.5, 1]");
    }
    if (responses.empty()) return std::nullopt;

    std::map<std::string, size_t> counts;
    for (const ResponseRecord& r : responses) {
        auto extracted = extract_final_answer(r.text, family);
        if (!extracted) continue;
        ++counts[normalize_answer(*extracted, family)];
    }
    if (counts.empty()) return std::nullopt;

    // Map order is ascending, so the first maximal count wins ties
    // lexicographically.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    double fraction = static_cast<double>(best->second) / static_cast<double>(responses.size());
    if (fraction < threshold) return std::nullopt;
    return std::make_pair(best->first, fraction);
}

}  // namespace ttc
