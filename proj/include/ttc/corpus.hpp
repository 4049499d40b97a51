#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ttc {

enum class TaskFamily { free_math, code, mcq, short_answer };

std::string to_string(TaskFamily family);
std::optional<TaskFamily> task_family_from_string(std::string_view name);

struct CodeTestCase {
    std::string input;            // fed to the program's stdin
    std::string expected_output;  // required stdout

    bool operator==(const CodeTestCase&) const = default;
};

struct Question {
    std::string id;
    TaskFamily task_family = TaskFamily::free_math;
    std::string text;
    std::vector<std::string> choices;       // mcq only
    std::string ground_truth;               // canonical answer (non-code families)
    std::vector<CodeTestCase> test_cases;   // code only
    std::map<std::string, std::string> metadata;

    bool operator==(const Question&) const = default;
};

// Immutable, ordered question bank. Iteration order is file order.
class QuestionSet {
public:
    QuestionSet() = default;
    static QuestionSet from_questions(std::vector<Question> questions,
                                      std::string source_digest = "");

    const std::vector<Question>& questions() const { return questions_; }
    size_t size() const { return questions_.size(); }
    bool empty() const { return questions_.empty(); }

    const Question* find(const std::string& id) const;
    const Question& by_id(const std::string& id) const;  // throws CorpusError

    const std::string& source_digest() const { return source_digest_; }

private:
    std::vector<Question> questions_;
    std::map<std::string, size_t> index_;
    std::string source_digest_;
};

// One JSON object per line. Unknown top-level fields land in metadata.
QuestionSet load_corpus(const std::filesystem::path& path);
QuestionSet parse_corpus(std::string_view bytes, const std::string& source_name);

// Canonical JSONL form; load_corpus(serialize_corpus(qs)) reproduces qs.
std::string serialize_corpus(const QuestionSet& questions);

// Pulls the final answer out of generated text. free_math/short_answer/mcq
// take the last balanced \boxed{...}; code takes the program body with any
// markdown fences stripped. Absence is a value, never an error.
std::optional<std::string> extract_final_answer(std::string_view response_text,
                                                TaskFamily family);

// Canonical form for grading. Idempotent for every input.
std::string normalize_answer(std::string_view raw, TaskFamily family);

}  // namespace ttc
