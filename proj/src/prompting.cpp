#include "ttc/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"

namespace ttc {

std::string to_string(PromptStage stage) {
    return stage == PromptStage::warmup ? "warmup" : "adaptive";
}

bool DemonstrationPool::retain(const std::string& question_id, RetainedSolution solution) {
    return entries_.emplace(question_id, std::move(solution)).second;
}

bool DemonstrationPool::contains(const std::string& question_id) const {
    return entries_.count(question_id) > 0;
}

const RetainedSolution* DemonstrationPool::find(const std::string& question_id) const {
    auto it = entries_.find(question_id);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<Demonstration> select_demonstrations(const Question& target,
                                                 const DemonstrationPool& pool,
                                                 const NeighborIndex& index, DemoSelection mode,
                                                 size_t top_p, RngStream& rng) {
    std::vector<Demonstration> out;
    if (top_p == 0 || pool.empty()) return out;

    if (mode == DemoSelection::similar) {
        for (const Neighbor& n : index.neighbors_of(target.id)) {
            if (out.size() >= top_p) break;
            const RetainedSolution* kept = pool.find(n.id);
            if (!kept) continue;
            out.push_back({n.id, kept->question_text, kept->solution_text});
        }
        return out;
    }

    std::vector<const std::string*> candidates;
    candidates.reserve(pool.size());
    for (const auto& [id, kept] : pool.entries()) {
        if (id != target.id) candidates.push_back(&id);
    }
    size_t want = std::min(top_p, candidates.size());
    // Partial Fisher-Yates over ascending ids; result keeps draw order.
    for (size_t i = 0; i < want; ++i) {
        size_t j = i + static_cast<size_t>(rng.uniform_below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
        const RetainedSolution* kept = pool.find(*candidates[i]);
        out.push_back({*candidates[i], kept->question_text, kept->solution_text});
    }
    return out;
}

namespace {

std::string mcq_body(const std::string& text, const std::vector<std::string>& choices) {
    std::string out = text;
    for (size_t i = 0; i < choices.size(); ++i) {
        out += '\n';
        out.push_back(static_cast<char>('A' + i));
        out += ") ";
        out += choices[i];
    }
    return out;
}

}  // namespace

std::string question_prompt_body(const Question& q) {
    if (q.task_family == TaskFamily::mcq) return mcq_body(q.text, q.choices);
    return q.text;
}

namespace {

std::string starter_or_na(const Question& q) {
    auto it = q.metadata.find("starter_code");
    if (it == q.metadata.end() || it->second.empty()) return "N/A";
    return it->second;
}

bool wants_minerva(const Question& q) {
    auto it = q.metadata.find("template");
    return it != q.metadata.end() && it->second == "minerva";
}

const std::string kSeparator = "---\n\n";

std::string math_warmup_line(const Question& q) {
    if (wants_minerva(q)) {
        return "Let's solve this step by step and put the final answer in \\boxed{} with just "
               "the numeric value.";
    }
    return "Reason step by step and put the final answer in \\boxed{}.";
}

std::string math_adaptive_lead(const Question& q) {
    if (wants_minerva(q)) return math_warmup_line(q);
    return "Now solve the following. Put the final answer in \\boxed{}.";
}

std::string problem_solution_block(const std::string& lead, const std::string& problem) {
    return lead + "\nProblem:\n" + problem + "\n\nSolution:";
}

std::string numbered_examples(const std::vector<Demonstration>& demos) {
    std::string out;
    for (size_t i = 0; i < demos.size(); ++i) {
        out += "Example " + std::to_string(i + 1) + "\nProblem:\n" + demos[i].question_text +
               "\n\nSolution:\n" + demos[i].solution_text + "\n\n";
    }
    return out;
}

std::string render_math_like(const Question& q, const std::vector<Demonstration>& demos,
                             const std::string& warmup_lead, const std::string& adaptive_lead) {
    if (demos.empty()) return problem_solution_block(warmup_lead, q.text);
    return numbered_examples(demos) + kSeparator + problem_solution_block(adaptive_lead, q.text);
}

std::string mcq_instruction() {
    return "Solve the problem step by step.\nSelect one selection and answer A, B, C or D in "
           "\\boxed{}.";
}

// Demonstrations show the bare letter when one is extractable, mirroring the
// "Answer: {letter}" form; otherwise the retained text stands as-is.
std::string mcq_demo_answer(const std::string& solution_text) {
    auto letter = extract_final_answer(solution_text, TaskFamily::mcq);
    return letter ? *letter : solution_text;
}

std::string render_mcq(const Question& q, const std::vector<Demonstration>& demos) {
    std::string target = mcq_instruction() + "\n\nQuestion: " + mcq_body(q.text, q.choices);
    if (demos.empty()) return target;
    std::string out = "You will see up to " + std::to_string(demos.size()) +
                      " previously answered multiple-choice questions.\nUse them as guidance. "
                      "After the examples, solve the question step by step.\nSelect one "
                      "selection and answer A, B, C or D in \\boxed{}.\n\n" +
                      kSeparator;
    for (size_t i = 0; i < demos.size(); ++i) {
        out += "Example " + std::to_string(i + 1) + "\n" + demos[i].question_text +
               "\nAnswer: " + mcq_demo_answer(demos[i].solution_text) + "\n\n" + kSeparator;
    }
    out += target;
    return out;
}

std::string code_base_prompt(const Question& q) {
    return "You are a competitive programming assistant.\nReturn ONLY valid Python 3 code that "
           "solves the task. Do not include explanations, comments, or markdown fences.\n\n"
           "Problem:\n" +
           q.text +
           "\n\nStarter (optional):\n" + starter_or_na(q) +
           "\n\nI/O requirements:\n"
           "- Read from STDIN exactly as described in the problem.\n"
           "- Write only the required answer(s) to STDOUT (no extra prints).\n"
           "- Do not read/write files. Do not use network.\n"
           "- Avoid heavy/obscure libraries.\n\n"
           "Constraints:\n"
           "- Python 3.10+.\n"
           "- Prefer iterative solutions if deep recursion could occur.\n"
           "- If multiple test cases exist, handle them all.\n\n"
           "Return ONLY the Python source code.";
}

std::string render_code(const Question& q, const std::vector<Demonstration>& demos) {
    if (demos.empty()) return code_base_prompt(q);
    std::string out = "You will see up to " + std::to_string(demos.size()) +
                      " previously solved coding problems with their Python 3 solutions.\nUse "
                      "them as guidance. After the examples, follow the final instructions "
                      "below.\nReturn ONLY valid Python 3 code (no explanations, comments, or "
                      "markdown fences).\n\n" +
                      kSeparator;
    for (size_t i = 0; i < demos.size(); ++i) {
        out += "Example " + std::to_string(i + 1) + "\nProblem:\n" + demos[i].question_text +
               "\n\nSolution (Python 3 code only):\n" + demos[i].solution_text + "\n\n" +
               kSeparator;
    }
    out += code_base_prompt(q);
    return out;
}

std::string render_default(const Question& q, const std::vector<Demonstration>& demos) {
    switch (q.task_family) {
        case TaskFamily::free_math:
            return render_math_like(q, demos, math_warmup_line(q), math_adaptive_lead(q));
        case TaskFamily::short_answer:
            return render_math_like(q, demos, "Put the final answer within \\boxed{}.",
                                    "Now solve the following. Put the final answer within "
                                    "\\boxed{}.");
        case TaskFamily::mcq:
            return render_mcq(q, demos);
        case TaskFamily::code:
            return render_code(q, demos);
    }
    throw Error("unreachable task family");
}

void replace_all(std::string& text, const std::string& needle, const std::string& value) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), value);
        pos += value.size();
    }
}

std::string render_override(const std::string& tpl, const Question& q,
                            const std::vector<Demonstration>& demos) {
    std::string out = tpl;
    std::string problem =
        q.task_family == TaskFamily::mcq ? mcq_body(q.text, q.choices) : q.text;
    replace_all(out, "{problem}", problem);
    replace_all(out, "{starter}", starter_or_na(q));
    replace_all(out, "{examples}", numbered_examples(demos));
    replace_all(out, "{example_count}", std::to_string(demos.size()));
    return out;
}

}  // namespace

TemplateOverrides TemplateOverrides::load(const std::filesystem::path& dir) {
    TemplateOverrides overrides;
    if (!std::filesystem::is_directory(dir)) {
        throw ConfigError("template override directory " + dir.string() + " does not exist");
    }
    const TaskFamily families[] = {TaskFamily::free_math, TaskFamily::code, TaskFamily::mcq,
                                   TaskFamily::short_answer};
    for (TaskFamily family : families) {
        for (PromptStage stage : {PromptStage::warmup, PromptStage::adaptive}) {
            std::string name = to_string(family) + "_" + to_string(stage) + ".txt";
            std::ifstream in(dir / name, std::ios::binary);
            if (!in) continue;
            std::ostringstream buf;
            buf << in.rdbuf();
            overrides.templates_[name] = buf.str();
        }
    }
    if (overrides.templates_.empty()) {
        throw ConfigError("template override directory " + dir.string() +
                          " contains no <family>_<stage>.txt files");
    }
    return overrides;
}

const std::string* TemplateOverrides::find(TaskFamily family, PromptStage stage) const {
    auto it = templates_.find(to_string(family) + "_" + to_string(stage) + ".txt");
    return it == templates_.end() ? nullptr : &it->second;
}

PromptSpec render_prompt(const Question& target, std::vector<Demonstration> demonstrations,
                         PromptStage stage, const TemplateOverrides* overrides) {
    if (stage == PromptStage::warmup && !demonstrations.empty()) {
        throw Error("warm-up prompts take no demonstrations");
    }
    for (const Demonstration& d : demonstrations) {
        if (d.source_question_id == target.id) {
            throw Error("question \"" + target.id + "\" cannot demonstrate itself");
        }
    }

    PromptSpec spec;
    spec.target_question_id = target.id;
    spec.stage = stage;
    spec.template_family = target.task_family;

    const std::string* tpl =
        overrides ? overrides->find(target.task_family, stage) : nullptr;
    if (tpl) {
        spec.rendered_text = render_override(*tpl, target, demonstrations);
    } else {
        spec.rendered_text = render_default(target, demonstrations);
    }
    spec.demonstrations = std::move(demonstrations);
    spec.text_digest = sha256_hex(spec.rendered_text);
    return spec;
}

}  // namespace ttc
