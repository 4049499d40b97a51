#include "ttc/engine.hpp"

#include <fstream>
#include <set>
#include <string_view>
#include <tuple>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"

namespace ttc {

using nlohmann::json;
using nlohmann::ordered_json;

TokenCounts& TokenCounts::operator+=(const TokenCounts& other) {
    prompt += other.prompt;
    output += other.output;
    thinking += other.thinking;
    return *this;
}

void TokenLedger::add(int round, const std::string& question_id, const TokenCounts& counts) {
    cells_[{round, question_id}] += counts;
}

TokenCounts TokenLedger::cumulative() const {
    TokenCounts total;
    for (const auto& [key, counts] : cells_) total += counts;
    return total;
}

TokenCounts TokenLedger::round_total(int round) const {
    TokenCounts total;
    for (const auto& [key, counts] : cells_) {
        if (key.first == round) total += counts;
    }
    return total;
}

namespace {

std::string retention_reason_name(RetentionReason reason) {
    return reason == RetentionReason::first_correct ? "first_correct" : "fallback_recent";
}

PromptStage prompt_stage_from_name(const std::string& name) {
    if (name == "warmup") return PromptStage::warmup;
    if (name == "adaptive") return PromptStage::adaptive;
    throw Error("unknown prompt stage \"" + name + "\"");
}

}  // namespace

std::string state_digest(const RunState& state) {
    ordered_json j;
    j["t"] = state.t;
    j["policy"] = to_string(state.policy);
    j["seed"] = state.seed;
    j["active"] = state.active;
    j["eval_solved"] = state.eval_solved;
    j["consensus"] = state.consensus_answers;
    ordered_json retained = ordered_json::array();
    for (const auto& [id, sol] : state.retained.entries()) {
        ordered_json entry;
        entry["id"] = id;
        entry["reason"] = retention_reason_name(sol.reason);
        entry["round"] = sol.round;
        entry["question_sha"] = sha256_hex(sol.question_text);
        entry["solution_sha"] = sha256_hex(sol.solution_text);
        retained.push_back(std::move(entry));
    }
    j["retained"] = std::move(retained);
    ordered_json counts = ordered_json::object();
    for (const auto& [id, pool] : state.pools) counts[id] = pool.size();
    j["counts"] = std::move(counts);
    ordered_json ledger = ordered_json::array();
    for (const auto& [key, cell] : state.ledger.cells()) {
        ledger.push_back({key.first, key.second, cell.prompt, cell.output, cell.thinking});
    }
    j["ledger"] = std::move(ledger);
    return sha256_hex(j.dump());
}

ordered_json run_meta_json(const RunMeta& meta) {
    ordered_json j;
    j["type"] = "meta";
    j["schema"] = meta.schema;
    j["policy"] = to_string(meta.policy);
    j["seed"] = meta.seed;
    j["base_digest"] = meta.base_digest;
    j["corpus_digest"] = meta.corpus_digest;
    j["backend"] = meta.backend_id;
    j["op_grader"] = meta.op_grader_id;
    j["eval_grader"] = meta.eval_grader_id;
    j["embedder"] = meta.embedder_id;
    j["config"] = meta.config;
    return j;
}

RunMeta run_meta_from_json(const json& j) {
    RunMeta meta;
    meta.schema = j.at("schema").get<int>();
    meta.policy = policy_kind_from_string(j.at("policy").get<std::string>());
    meta.seed = j.at("seed").get<uint64_t>();
    meta.base_digest = j.at("base_digest").get<std::string>();
    meta.corpus_digest = j.at("corpus_digest").get<std::string>();
    meta.backend_id = j.at("backend").get<std::string>();
    meta.op_grader_id = j.at("op_grader").get<std::string>();
    meta.eval_grader_id = j.at("eval_grader").get<std::string>();
    meta.embedder_id = j.at("embedder").get<std::string>();
    meta.config = j.at("config");
    return meta;
}

ordered_json response_record_json(const ResponseRecord& r) {
    ordered_json j;
    j["type"] = "response";
    j["question_id"] = r.question_id;
    j["round"] = r.round;
    j["sample_index"] = r.sample_index;
    j["stage"] = to_string(r.stage);
    j["prompt_digest"] = r.prompt_digest;
    j["demo_source_ids"] = r.demo_source_ids;
    j["temperature"] = r.temperature;
    j["backend_id"] = r.backend_id;
    j["seed_path"] = r.seed_path;
    j["text"] = r.text;
    if (r.extracted_answer) {
        j["extracted_answer"] = *r.extracted_answer;
    } else {
        j["extracted_answer"] = nullptr;
    }
    j["prompt_tokens"] = r.prompt_tokens;
    j["output_tokens"] = r.output_tokens;
    j["thinking_tokens"] = r.thinking_tokens;
    j["truncated"] = r.truncated;
    j["op_score"] = r.op_score;
    j["op_solved"] = r.op_solved;
    j["eval_score"] = r.eval_score;
    j["eval_solved"] = r.eval_solved;
    j["grader_id"] = r.grader_id;
    return j;
}

ResponseRecord response_record_from_json(const json& j) {
    ResponseRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.round = j.at("round").get<int>();
    r.sample_index = j.at("sample_index").get<int>();
    r.stage = prompt_stage_from_name(j.at("stage").get<std::string>());
    r.prompt_digest = j.at("prompt_digest").get<std::string>();
    r.demo_source_ids = j.at("demo_source_ids").get<std::vector<std::string>>();
    r.temperature = j.at("temperature").get<double>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.seed_path = j.at("seed_path").get<std::string>();
    r.text = j.at("text").get<std::string>();
    const json& answer = j.at("extracted_answer");
    if (!answer.is_null()) r.extracted_answer = answer.get<std::string>();
    r.prompt_tokens = j.at("prompt_tokens").get<long long>();
    r.output_tokens = j.at("output_tokens").get<long long>();
    r.thinking_tokens = j.at("thinking_tokens").get<long long>();
    r.truncated = j.at("truncated").get<bool>();
    r.op_score = j.at("op_score").get<double>();
    r.op_solved = j.at("op_solved").get<bool>();
    r.eval_score = j.at("eval_score").get<double>();
    r.eval_solved = j.at("eval_solved").get<bool>();
    r.grader_id = j.at("grader_id").get<std::string>();
    return r;
}

ordered_json round_report_json(const RoundReport& r) {
    ordered_json j;
    j["type"] = "round";
    j["round"] = r.round;
    j["coverage"] = r.coverage;
    j["op_coverage"] = r.op_coverage;
    j["accuracy"] = r.accuracy;
    j["active_count"] = r.active_count;
    j["round_prompt_tokens"] = r.tokens_round.prompt;
    j["round_output_tokens"] = r.tokens_round.output;
    j["round_thinking_tokens"] = r.tokens_round.thinking;
    j["cum_prompt_tokens"] = r.tokens_cum.prompt;
    j["cum_output_tokens"] = r.tokens_cum.output;
    j["cum_thinking_tokens"] = r.tokens_cum.thinking;
    return j;
}

RoundReport round_report_from_json(const json& j) {
    RoundReport r;
    r.round = j.at("round").get<int>();
    r.coverage = j.at("coverage").get<double>();
    r.op_coverage = j.at("op_coverage").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.active_count = j.at("active_count").get<int>();
    r.tokens_round.prompt = j.at("round_prompt_tokens").get<long long>();
    r.tokens_round.output = j.at("round_output_tokens").get<long long>();
    r.tokens_round.thinking = j.at("round_thinking_tokens").get<long long>();
    r.tokens_cum.prompt = j.at("cum_prompt_tokens").get<long long>();
    r.tokens_cum.output = j.at("cum_output_tokens").get<long long>();
    r.tokens_cum.thinking = j.at("cum_thinking_tokens").get<long long>();
    return r;
}

RunLogWriter::RunLogWriter(const std::filesystem::path& path, const RunMeta& meta)
    : path_(path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error("cannot open run log for writing: " + path.string());
    append_line(run_meta_json(meta));
}

RunLogWriter RunLogWriter::append_at(const std::filesystem::path& path, long long offset) {
    std::error_code ec;
    auto size = std::filesystem::file_size(path, ec);
    if (ec) throw Error("cannot stat run log " + path.string() + ": " + ec.message());
    if (offset < 0 || static_cast<unsigned long long>(offset) > size) {
        throw Error("resume offset " + std::to_string(offset) + " outside run log " +
                    path.string());
    }
    std::filesystem::resize_file(path, static_cast<uintmax_t>(offset), ec);
    if (ec) throw Error("cannot truncate run log " + path.string() + ": " + ec.message());
    RunLogWriter writer;
    writer.path_ = path;
    writer.out_.open(path, std::ios::binary | std::ios::app);
    if (!writer.out_) throw Error("cannot reopen run log for append: " + path.string());
    return writer;
}

void RunLogWriter::append_line(const ordered_json& j) {
    out_ << j.dump() << '\n';
    if (!out_) throw Error("write failed on run log " + path_.string());
}

void RunLogWriter::append_response(const ResponseRecord& record) {
    append_line(response_record_json(record));
}

void RunLogWriter::append_round(const RoundReport& report) {
    append_line(round_report_json(report));
}

void RunLogWriter::append_checkpoint(int round, const std::string& digest) {
    ordered_json j;
    j["type"] = "checkpoint";
    j["round"] = round;
    j["state_digest"] = digest;
    append_line(j);
}

void RunLogWriter::flush() { out_.flush(); }

RunLog load_run_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LogError("cannot open run log: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    RunLog log;
    std::set<std::tuple<std::string, int, int>> seen;
    bool have_meta = false;
    size_t pos = 0;
    while (pos < bytes.size()) {
        size_t nl = bytes.find('\n', pos);
        // A line the writer finished always ends in a newline; a missing one
        // marks a torn final write and ends the log cleanly.
        if (nl == std::string::npos) break;
        std::string_view line(bytes.data() + pos, nl - pos);
        long long offset = static_cast<long long>(pos);

        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw LogError("run log " + path.string() + ": unparseable record at byte " +
                               std::to_string(offset) + ": " + e.what(),
                           offset);
        }
        try {
            std::string type = j.at("type").get<std::string>();
            if (!have_meta) {
                if (type != "meta") throw Error("first record must be meta, got " + type);
                log.meta = run_meta_from_json(j);
                if (log.meta.schema != 1) {
                    throw Error("unsupported schema " + std::to_string(log.meta.schema));
                }
                have_meta = true;
                log.last_complete_offset = static_cast<long long>(nl) + 1;
            } else if (type == "response") {
                ResponseRecord r = response_record_from_json(j);
                if (!seen.insert({r.question_id, r.round, r.sample_index}).second) {
                    throw Error("duplicate response (" + r.question_id + ", round " +
                                std::to_string(r.round) + ", sample " +
                                std::to_string(r.sample_index) + ")");
                }
                log.records.push_back(std::move(r));
            } else if (type == "round") {
                log.reports.push_back(round_report_from_json(j));
            } else if (type == "checkpoint") {
                int round = j.at("round").get<int>();
                if (round < 1) throw Error("checkpoint round must be >= 1");
                log.round_digests[round] = j.at("state_digest").get<std::string>();
                log.last_complete_round = round;
                log.last_complete_offset = static_cast<long long>(nl) + 1;
            } else if (type == "meta") {
                throw Error("second meta record");
            } else {
                throw Error("unknown record type \"" + type + "\"");
            }
        } catch (const LogError&) {
            throw;
        } catch (const std::exception& e) {
            throw LogError("run log " + path.string() + ": bad record at byte " +
                               std::to_string(offset) + ": " + e.what(),
                           offset);
        }
        pos = nl + 1;
    }
    if (!have_meta) throw LogError("run log " + path.string() + " has no meta record", 0);
    return log;
}

}  // namespace ttc
