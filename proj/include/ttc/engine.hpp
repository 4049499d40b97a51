#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttc/config.hpp"
#include "ttc/corpus.hpp"
#include "ttc/embedding.hpp"
#include "ttc/generation.hpp"
#include "ttc/policy.hpp"
#include "ttc/prompting.hpp"
#include "ttc/record.hpp"
#include "ttc/reward.hpp"

namespace ttc {

struct TokenCounts {
    long long prompt = 0;
    long long output = 0;
    long long thinking = 0;

    long long total() const { return prompt + output + thinking; }

    TokenCounts& operator+=(const TokenCounts& other);
    bool operator==(const TokenCounts&) const = default;
};

// Per-(round, question) token cells. cumulative() is always the exact fold
// over every cell, so ledger totals and record sums never drift apart.
class TokenLedger {
public:
    void add(int round, const std::string& question_id, const TokenCounts& counts);

    TokenCounts cumulative() const;
    TokenCounts round_total(int round) const;

    const std::map<std::pair<int, std::string>, TokenCounts>& cells() const { return cells_; }

    bool operator==(const TokenLedger&) const = default;

private:
    std::map<std::pair<int, std::string>, TokenCounts> cells_;
};

// Full mutable state of one run. t counts completed rounds. Solved questions
// leave `active`; their first qualifying response lives in `retained`.
// Under self-consistency, elimination instead freezes the winning answer
// into `consensus_answers`. eval_solved tracks ground truth only and never
// feeds back into allocation.
struct RunState {
    PolicyKind policy = PolicyKind::elimination;
    uint64_t seed = 0;
    int t = 0;
    std::set<std::string> active;
    std::map<std::string, std::vector<ResponseRecord>> pools;
    DemonstrationPool retained;
    std::set<std::string> eval_solved;
    std::map<std::string, std::string> consensus_answers;
    TokenLedger ledger;

    bool operator==(const RunState&) const = default;
};

// Canonical digest of a RunState. Identical states, identical digest; used
// to verify replay against the live run at every checkpoint.
std::string state_digest(const RunState& state);

struct RoundReport {
    int round = 0;
    double coverage = 0.0;     // ground truth: fraction with >= 1 eval-correct response
    double op_coverage = 0.0;  // fraction eliminated by the operational rule
    double accuracy = 0.0;     // self-consistency mode: voted answer == ground truth
    int active_count = 0;
    TokenCounts tokens_round;
    TokenCounts tokens_cum;

    bool operator==(const RoundReport&) const = default;
};

struct RunMeta {
    int schema = 1;
    PolicyKind policy = PolicyKind::elimination;
    uint64_t seed = 0;
    std::string base_digest;    // config identity modulo seeds/policies
    std::string corpus_digest;  // digest of the canonical corpus serialization
    std::string backend_id;
    std::string op_grader_id;
    std::string eval_grader_id;
    std::string embedder_id;
    nlohmann::json config;      // full RunConfig JSON form
};

// JSON forms used by the log file. Writer and loader share them, so
// write -> load is an exact round trip.
nlohmann::ordered_json run_meta_json(const RunMeta& meta);
RunMeta run_meta_from_json(const nlohmann::json& j);
nlohmann::ordered_json response_record_json(const ResponseRecord& record);
ResponseRecord response_record_from_json(const nlohmann::json& j);
nlohmann::ordered_json round_report_json(const RoundReport& report);
RoundReport round_report_from_json(const nlohmann::json& j);

// Append-only JSON-lines writer. A fresh file starts with the meta record;
// each completed round contributes its responses, a round report, and a
// checkpoint carrying the state digest. Only newline-terminated lines count
// as written, so a torn final line never corrupts the log.
class RunLogWriter {
public:
    RunLogWriter(const std::filesystem::path& path, const RunMeta& meta);

    // Reopens an existing log for appending after truncating it to `offset`,
    // which must be a round boundary.
    static RunLogWriter append_at(const std::filesystem::path& path, long long offset);

    void append_response(const ResponseRecord& record);
    void append_round(const RoundReport& report);
    void append_checkpoint(int round, const std::string& digest);
    void flush();

    const std::filesystem::path& path() const { return path_; }

private:
    RunLogWriter() = default;
    void append_line(const nlohmann::ordered_json& j);

    std::filesystem::path path_;
    std::ofstream out_;
};

// One run's complete history. Loaded logs keep records in file order;
// records past the last checkpoint belong to an unfinished round and are
// ignored by replay and resume.
struct RunLog {
    RunMeta meta;
    std::vector<ResponseRecord> records;
    std::vector<RoundReport> reports;
    std::map<int, std::string> round_digests;
    int last_complete_round = 0;
    long long last_complete_offset = 0;  // byte offset just past the last checkpoint
    RunState final_state;                // live runs only; replay reconstructs it for loads
};

// Throws LogError naming the byte offset of the first corrupt record. A
// missing trailing newline marks a torn write and silently ends the log.
RunLog load_run_log(const std::filesystem::path& path);

// Rebuilds the state at log.last_complete_round from response records alone,
// checking every checkpoint digest on the way. No backend calls.
RunState replay_state(const RunLog& log, const QuestionSet& corpus);

// Everything a run needs beyond config and corpus. Graders and backend are
// required; the rest depends on policy and neighborhood domain. Budgets are
// how uniform and difficulty-aware runs get token-matched to elimination.
struct RunEnv {
    GenerationBackend* backend = nullptr;
    Grader* op_grader = nullptr;
    Grader* eval_grader = nullptr;            // ground truth; reporting only
    const EmbeddingStore* embeddings = nullptr;   // active-set neighborhoods
    const NeighborIndex* neighbors = nullptr;     // full-set neighborhoods
    DifficultyEstimator* difficulty = nullptr;    // difficulty_aware policy
    const TemplateOverrides* overrides = nullptr;
    std::string embedder_id;
    int max_in_flight = 1;
    long long uniform_output_budget = 0;       // uniform stops past this; 0 = unbounded
    std::map<int, long long> da_round_budgets;  // round -> B_t; absent = K * |active|
};

// Executes rounds 1..R for one (policy, seed) pair. Deterministic for the
// sim backend: identical inputs give byte-identical logs. A non-empty
// log_path streams the log to disk as rounds complete; failures mid-round
// leave the file ending at the last checkpoint, ready for resume.
RunLog run_experiment(const RunConfig& config, const QuestionSet& corpus, PolicyKind policy,
                      uint64_t seed, RunEnv& env, const std::filesystem::path& log_path = {});

// Picks up an interrupted run at its last complete round and plays the
// remaining rounds, appending in place. The config and corpus must match the
// ones recorded in the log.
RunLog resume_experiment(const RunConfig& config, const QuestionSet& corpus,
                         const std::filesystem::path& log_path, RunEnv& env);

}  // namespace ttc
