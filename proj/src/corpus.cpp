#include "ttc/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"

namespace ttc {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(TaskFamily family) {
    switch (family) {
        case TaskFamily::free_math: return "free_math";
        case TaskFamily::code: return "code";
        case TaskFamily::mcq: return "mcq";
        case TaskFamily::short_answer: return "short_answer";
    }
    return "free_math";
}

std::optional<TaskFamily> task_family_from_string(std::string_view name) {
    if (name == "free_math") return TaskFamily::free_math;
    if (name == "code") return TaskFamily::code;
    if (name == "mcq") return TaskFamily::mcq;
    if (name == "short_answer") return TaskFamily::short_answer;
    return std::nullopt;
}

QuestionSet QuestionSet::from_questions(std::vector<Question> questions,
                                        std::string source_digest) {
    QuestionSet qs;
    qs.questions_ = std::move(questions);
    qs.source_digest_ = std::move(source_digest);
    for (size_t i = 0; i < qs.questions_.size(); ++i) {
        auto [it, inserted] = qs.index_.emplace(qs.questions_[i].id, i);
        if (!inserted) {
            throw CorpusError("duplicate question id \"" + qs.questions_[i].id + "\"");
        }
    }
    return qs;
}

const Question* QuestionSet::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &questions_[it->second];
}

const Question& QuestionSet::by_id(const std::string& id) const {
    const Question* q = find(id);
    if (!q) throw CorpusError("unknown question id \"" + id + "\"");
    return *q;
}

namespace {

std::string json_to_metadata_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

Question parse_question(const json& obj, const std::string& where) {
    if (!obj.is_object()) throw CorpusError(where + ": expected a JSON object");
    Question q;
    for (const auto& [key, value] : obj.items()) {
        if (key == "id") {
            if (!value.is_string() || value.get<std::string>().empty()) {
                throw CorpusError(where + ": \"id\" must be a non-empty string");
            }
            q.id = value.get<std::string>();
        } else if (key == "task_family") {
            if (!value.is_string()) throw CorpusError(where + ": \"task_family\" must be a string");
            auto fam = task_family_from_string(value.get<std::string>());
            if (!fam) {
                throw CorpusError(where + ": unknown task_family \"" + value.get<std::string>() +
                                  "\"");
            }
            q.task_family = *fam;
        } else if (key == "text") {
            if (!value.is_string()) throw CorpusError(where + ": \"text\" must be a string");
            q.text = value.get<std::string>();
        } else if (key == "choices") {
            if (!value.is_array()) throw CorpusError(where + ": \"choices\" must be an array");
            for (const auto& c : value) {
                if (!c.is_string()) throw CorpusError(where + ": choices must be strings");
                q.choices.push_back(c.get<std::string>());
            }
        } else if (key == "ground_truth") {
            if (value.is_string()) {
                q.ground_truth = value.get<std::string>();
            } else if (value.is_array()) {
                for (const auto& tc : value) {
                    if (!tc.is_object() || !tc.contains("stdin") || !tc.contains("stdout")) {
                        throw CorpusError(where +
                                          ": code ground_truth entries need stdin and stdout");
                    }
                    q.test_cases.push_back(
                        {tc.at("stdin").get<std::string>(), tc.at("stdout").get<std::string>()});
                }
            } else {
                throw CorpusError(where + ": \"ground_truth\" must be a string or an array");
            }
        } else if (key == "metadata") {
            if (!value.is_object()) throw CorpusError(where + ": \"metadata\" must be an object");
            for (const auto& [mk, mv] : value.items()) {
                q.metadata[mk] = json_to_metadata_string(mv);
            }
        } else {
            // Unknown fields are preserved rather than dropped.
            q.metadata[key] = json_to_metadata_string(value);
        }
    }
    if (q.id.empty()) throw CorpusError(where + ": missing \"id\"");
    if (q.text.empty()) throw CorpusError(where + ": question \"" + q.id + "\" has empty text");
    if (q.task_family == TaskFamily::code && q.test_cases.empty()) {
        throw CorpusError(where + ": code question \"" + q.id + "\" needs stdin/stdout test cases");
    }
    if (q.task_family != TaskFamily::code && !q.test_cases.empty()) {
        throw CorpusError(where + ": question \"" + q.id +
                          "\" has test-case ground_truth but is not a code question");
    }
    if (q.task_family == TaskFamily::mcq) {
        if (q.choices.empty()) {
            throw CorpusError(where + ": mcq question \"" + q.id + "\" has no choices");
        }
        const std::string& gt = q.ground_truth;
        if (gt.size() != 1 || gt[0] < 'A' || gt[0] > 'D') {
            throw CorpusError(where + ": mcq question \"" + q.id +
                              "\" ground_truth must be one of A-D");
        }
    }
    return q;
}

}  // namespace

QuestionSet parse_corpus(std::string_view bytes, const std::string& source_name) {
    std::vector<Question> questions;
    std::map<std::string, size_t> seen;  // id -> first line number

    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= bytes.size()) {
        size_t eol = bytes.find('\n', pos);
        std::string_view line =
            eol == std::string_view::npos ? bytes.substr(pos) : bytes.substr(pos, eol - pos);
        pos = eol == std::string_view::npos ? bytes.size() + 1 : eol + 1;
        ++line_no;

        // Skip blank lines (including a trailing newline at EOF).
        bool blank = true;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) { blank = false; break; }
        }
        if (blank) continue;

        std::string where = source_name + ":" + std::to_string(line_no);
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw CorpusError(where + ": malformed JSON line: " + e.what());
        }
        Question q = parse_question(obj, where);
        auto [it, inserted] = seen.emplace(q.id, line_no);
        if (!inserted) {
            throw CorpusError(source_name + ": duplicate question id \"" + q.id + "\" (lines " +
                              std::to_string(it->second) + " and " + std::to_string(line_no) +
                              ")");
        }
        questions.push_back(std::move(q));
    }
    return QuestionSet::from_questions(std::move(questions),
                                       sha256_hex(bytes));
}

QuestionSet load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_corpus(buf.str(), path.string());
}

std::string serialize_corpus(const QuestionSet& questions) {
    std::string out;
    for (const Question& q : questions.questions()) {
        ordered_json obj;
        obj["id"] = q.id;
        obj["task_family"] = to_string(q.task_family);
        obj["text"] = q.text;
        if (!q.choices.empty()) obj["choices"] = q.choices;
        if (q.task_family == TaskFamily::code) {
            ordered_json cases = ordered_json::array();
            for (const auto& tc : q.test_cases) {
                cases.push_back({{"stdin", tc.input}, {"stdout", tc.expected_output}});
            }
            obj["ground_truth"] = cases;
        } else {
            obj["ground_truth"] = q.ground_truth;
        }
        if (!q.metadata.empty()) {
            ordered_json meta = ordered_json::object();
            for (const auto& [k, v] : q.metadata) meta[k] = v;
            obj["metadata"] = meta;
        }
        out += obj.dump();
        out += '\n';
    }
    return out;
}

namespace {

std::string_view trim_view(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Content of the last balanced \boxed{...}, scanning occurrences from the end.
std::optional<std::string> last_boxed(std::string_view text) {
    static constexpr std::string_view marker = "\\boxed{";
    size_t pos = text.rfind(marker);
    while (pos != std::string_view::npos) {
        size_t body = pos + marker.size();
        int depth = 1;
        size_t i = body;
        for (; i < text.size(); ++i) {
            if (text[i] == '{') {
                ++depth;
            } else if (text[i] == '}') {
                if (--depth == 0) break;
            }
        }
        if (depth == 0) return std::string(trim_view(text.substr(body, i - body)));
        if (pos == 0) break;
        pos = text.rfind(marker, pos - 1);
    }
    return std::nullopt;
}

std::string strip_code_fences(std::string_view text) {
    std::string_view body = trim_view(text);
    if (body.substr(0, 3) == "```") {
        size_t first_nl = body.find('\n');
        if (first_nl == std::string_view::npos) return "";
        body = body.substr(first_nl + 1);
        // Drop a closing fence on its own final line.
        std::string_view tail = trim_view(body);
        if (tail.size() >= 3 && tail.substr(tail.size() - 3) == "```") {
            size_t cut = body.rfind("```");
            body = trim_view(body.substr(0, cut));
        }
    }
    return std::string(body);
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
        } else {
            if (in_space && !out.empty()) out.push_back(' ');
            in_space = false;
            out.push_back(c);
        }
    }
    return out;
}

bool is_plain_integer(std::string_view s) {
    if (s.empty()) return false;
    size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

std::string canonical_integer(std::string_view s) {
    bool negative = s[0] == '-';
    size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
    while (i + 1 < s.size() && s[i] == '0') ++i;
    std::string digits(s.substr(i));
    if (digits == "0") return "0";
    return negative ? "-" + digits : digits;
}

// Strips $...$ and whole-string \text{...} wrappers until none remain.
std::string strip_math_wrappers(std::string_view s) {
    std::string_view cur = trim_view(s);
    for (;;) {
        if (cur.size() >= 2 && cur.front() == '$' && cur.back() == '$') {
            size_t lead = 0;
            while (lead < cur.size() && cur[lead] == '$') ++lead;
            size_t tail = 0;
            while (tail < cur.size() - lead && cur[cur.size() - 1 - tail] == '$') ++tail;
            std::string_view middle = cur.substr(lead, cur.size() - lead - tail);
            // Only a wrapper when the interior has no further dollars;
            // "$x$ and $y$" is content, not a wrapper.
            if (!middle.empty() && middle.find('$') == std::string_view::npos) {
                cur = trim_view(middle);
                continue;
            }
        }
        static constexpr std::string_view text_marker = "\\text{";
        if (cur.size() > text_marker.size() && cur.substr(0, text_marker.size()) == text_marker &&
            cur.back() == '}') {
            // The closing brace must match the opening one.
            int depth = 1;
            size_t i = text_marker.size();
            for (; i < cur.size(); ++i) {
                if (cur[i] == '{') ++depth;
                else if (cur[i] == '}' && --depth == 0) break;
            }
            if (depth == 0 && i == cur.size() - 1) {
                cur = trim_view(cur.substr(text_marker.size(), i - text_marker.size()));
                continue;
            }
        }
        break;
    }
    return std::string(cur);
}

}  // namespace

std::optional<std::string> extract_final_answer(std::string_view response_text,
                                                TaskFamily family) {
    if (family == TaskFamily::code) {
        std::string body = strip_code_fences(response_text);
        if (body.empty()) return std::nullopt;
        return body;
    }
    auto boxed = last_boxed(response_text);
    if (!boxed) return std::nullopt;
    if (family == TaskFamily::mcq) {
        std::string letter = std::string(trim_view(*boxed));
        if (letter.size() != 1) return std::nullopt;
        char c = static_cast<char>(std::toupper(static_cast<unsigned char>(letter[0])));
        if (c < 'A' || c > 'D') return std::nullopt;
        return std::string(1, c);
    }
    return boxed;
}

std::string normalize_answer(std::string_view raw, TaskFamily family) {
    switch (family) {
        case TaskFamily::mcq: {
            std::string s(trim_view(raw));
            for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            return s;
        }
        case TaskFamily::code:
            return std::string(trim_view(raw));
        case TaskFamily::short_answer:
            return collapse_whitespace(trim_view(raw));
        case TaskFamily::free_math: {
            std::string s = strip_math_wrappers(raw);
            s = collapse_whitespace(s);
            if (is_plain_integer(s)) return canonical_integer(s);
            return s;
        }
    }
    return std::string(trim_view(raw));
}

}  // namespace ttc
