#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ttc/prompting.hpp"

namespace ttc {

// One generated response with grading and token accounting. The operational
// score drives allocation (it may come from a judge or a noisy wrapper); the
// evaluative score is always ground truth and never feeds back into control.
struct ResponseRecord {
    std::string question_id;
    int round = 0;
    int sample_index = 0;  // k within (question, round)
    PromptStage stage = PromptStage::warmup;
    std::string prompt_digest;
    std::vector<std::string> demo_source_ids;
    double temperature = 0.3;
    std::string backend_id;
    std::string seed_path;  // rng lineage of the generation call
    std::string text;
    std::optional<std::string> extracted_answer;
    long long prompt_tokens = 0;
    long long output_tokens = 0;
    long long thinking_tokens = 0;
    bool truncated = false;
    double op_score = 0.0;
    bool op_solved = false;
    double eval_score = 0.0;
    bool eval_solved = false;
    std::string grader_id;

    bool operator==(const ResponseRecord&) const = default;
};

}  // namespace ttc
