#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ttc/corpus.hpp"
#include "ttc/embedding.hpp"
#include "ttc/rng.hpp"

namespace ttc {

enum class PromptStage { warmup, adaptive };

std::string to_string(PromptStage stage);

// Why a solution sits in the pool. Normally the first correct response is
// kept; under noisy-reward fallback the most recent response stands in for
// questions that never produced a graded-correct one.
enum class RetentionReason { first_correct, fallback_recent };

struct RetainedSolution {
    std::string question_text;
    std::string solution_text;
    RetentionReason reason = RetentionReason::first_correct;
    int round = 0;  // round the solution was retained in

    bool operator==(const RetainedSolution&) const = default;
};

// Solved questions paired with their retained responses. First retention
// wins; later correct responses for the same question are ignored.
class DemonstrationPool {
public:
    // Returns false (and keeps the old entry) when the id is already pooled.
    bool retain(const std::string& question_id, RetainedSolution solution);

    bool contains(const std::string& question_id) const;
    const RetainedSolution* find(const std::string& question_id) const;
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // Ascending id order.
    const std::map<std::string, RetainedSolution>& entries() const { return entries_; }

    bool operator==(const DemonstrationPool&) const = default;

private:
    std::map<std::string, RetainedSolution> entries_;
};

struct Demonstration {
    std::string source_question_id;
    std::string question_text;
    std::string solution_text;

    bool operator==(const Demonstration&) const = default;
};

enum class DemoSelection { similar, random };

// Text a question contributes when quoted inside a prompt: the statement,
// plus lettered choice lines for multiple choice.
std::string question_prompt_body(const Question& q);

// similar: walk the target's fixed neighbor list in order, keep pooled
// entries, truncate to top_p. random: uniform sample without replacement
// from the pool minus the target, in draw order.
std::vector<Demonstration> select_demonstrations(const Question& target,
                                                 const DemonstrationPool& pool,
                                                 const NeighborIndex& index, DemoSelection mode,
                                                 size_t top_p, RngStream& rng);

struct PromptSpec {
    std::string target_question_id;
    PromptStage stage = PromptStage::warmup;
    std::vector<Demonstration> demonstrations;
    TaskFamily template_family = TaskFamily::free_math;
    std::string rendered_text;
    std::string text_digest;
};

// Per-(family, stage) template replacements loaded from a directory of
// <family>_<stage>.txt files. Placeholders: {problem}, {starter},
// {examples}, {example_count}. A static adaptive template that ignores
// {examples} realizes the fixed-demonstration ablation.
class TemplateOverrides {
public:
    TemplateOverrides() = default;
    static TemplateOverrides load(const std::filesystem::path& dir);

    const std::string* find(TaskFamily family, PromptStage stage) const;
    bool empty() const { return templates_.empty(); }

private:
    std::map<std::string, std::string> templates_;
};

// Renders the prompt for the question's task family. Warm-up is zero-shot;
// adaptive prepends numbered example blocks. Zero-demonstration adaptive
// renders exactly the warm-up text. Pure: equal inputs, identical bytes.
PromptSpec render_prompt(const Question& target, std::vector<Demonstration> demonstrations,
                         PromptStage stage, const TemplateOverrides* overrides = nullptr);

}  // namespace ttc
