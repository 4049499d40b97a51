#include "ttc/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ttc/config.hpp"
#include "ttc/corpus.hpp"
#include "ttc/embedding.hpp"
#include "ttc/engine.hpp"
#include "ttc/error.hpp"
#include "ttc/generation.hpp"
#include "ttc/hash.hpp"
#include "ttc/policy.hpp"
#include "ttc/prompting.hpp"
#include "ttc/report.hpp"
#include "ttc/reward.hpp"

namespace ttc {
namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct RunEntry {
    PolicyKind policy = PolicyKind::elimination;
    uint64_t seed = 0;
    std::string log_name;
    std::string status = "pending";  // pending | complete | aborted | skipped
    std::string error;
    int rounds = 0;
};

struct Manifest {
    std::string config_path;  // absolute
    std::string corpus_path;  // absolute
    std::string base_digest;
    std::string corpus_digest;
    nlohmann::json config;  // effective RunConfig, JSON form
    std::vector<RunEntry> runs;
};

std::string log_name_for(PolicyKind policy, uint64_t seed) {
    return to_string(policy) + "-s" + std::to_string(seed) + ".jsonl";
}

// Rewritten whole on every status change, via rename so readers never see a
// half-written file. Contains no timestamps: identical runs leave identical
// manifests.
void write_manifest(const fs::path& dir, const Manifest& manifest) {
    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["config_path"] = manifest.config_path;
    j["corpus_path"] = manifest.corpus_path;
    j["base_digest"] = manifest.base_digest;
    j["corpus_digest"] = manifest.corpus_digest;
    j["config"] = manifest.config;
    j["runs"] = nlohmann::ordered_json::array();
    for (const RunEntry& run : manifest.runs) {
        nlohmann::ordered_json r;
        r["policy"] = to_string(run.policy);
        r["seed"] = run.seed;
        r["log"] = run.log_name;
        r["status"] = run.status;
        r["rounds"] = run.rounds;
        if (!run.error.empty()) r["error"] = run.error;
        j["runs"].push_back(std::move(r));
    }
    fs::path tmp = dir / "manifest.json.tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << j.dump(2) << '\n';
        if (!out) throw Error("cannot write " + tmp.string());
    }
    fs::rename(tmp, dir / "manifest.json");
}

Manifest read_manifest(const fs::path& dir) {
    fs::path path = dir / "manifest.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("no manifest at " + path.string() + "; run an experiment first");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("unreadable manifest at " + path.string() + ": " + e.what());
    }
    try {
        Manifest manifest;
        manifest.config_path = j.at("config_path").get<std::string>();
        manifest.corpus_path = j.at("corpus_path").get<std::string>();
        manifest.base_digest = j.at("base_digest").get<std::string>();
        manifest.corpus_digest = j.at("corpus_digest").get<std::string>();
        manifest.config = j.at("config");
        for (const auto& r : j.at("runs")) {
            RunEntry entry;
            entry.policy = policy_kind_from_string(r.at("policy").get<std::string>());
            entry.seed = r.at("seed").get<uint64_t>();
            entry.log_name = r.at("log").get<std::string>();
            entry.status = r.at("status").get<std::string>();
            entry.rounds = r.at("rounds").get<int>();
            if (r.contains("error")) entry.error = r.at("error").get<std::string>();
            manifest.runs.push_back(std::move(entry));
        }
        return manifest;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed manifest at " + path.string() + ": " + e.what());
    }
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : text) {
        if (c == ',') {
            parts.push_back(current);
            current.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            current.push_back(c);
        }
    }
    parts.push_back(current);
    return parts;
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
    std::vector<uint64_t> seeds;
    for (const std::string& part : split_csv(text)) {
        try {
            size_t used = 0;
            uint64_t value = std::stoull(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
            seeds.push_back(value);
        } catch (const std::exception&) {
            throw ConfigError("--seeds expects comma-separated integers, got \"" + part + "\"");
        }
    }
    return seeds;
}

std::vector<PolicyKind> parse_policies(const std::string& text) {
    std::vector<PolicyKind> policies;
    for (const std::string& part : split_csv(text)) {
        policies.push_back(policy_kind_from_string(part));
    }
    return policies;
}

fs::path resolve_against(const fs::path& base, const fs::path& p) {
    return p.is_absolute() ? p : base / p;
}

// Auth tokens come from the environment, never from config files, so the
// config (and with it every run log) stays free of secrets.
std::string require_env(const std::string& var, const std::string& what) {
    if (var.empty()) return "";
    const char* value = std::getenv(var.c_str());
    if (!value || !*value) {
        throw ConfigError(what + " needs the " + var + " environment variable set");
    }
    return value;
}

bool has_policy(const std::vector<PolicyKind>& policies, PolicyKind kind) {
    return std::find(policies.begin(), policies.end(), kind) != policies.end();
}

// Owns every component the runs share. Heap-allocated and never moved:
// the backend holds pointers into `corpus` and `store`.
struct Rig {
    RunConfig config;
    fs::path config_dir;
    QuestionSet corpus;
    std::unique_ptr<Embedder> embedder;
    EmbeddingStore store;
    bool has_store = false;
    NeighborIndex neighbors;
    bool has_neighbors = false;
    std::unique_ptr<SandboxRunner> sandbox;
    std::unique_ptr<GenerationBackend> backend;
    std::unique_ptr<GroundTruthGrader> eval_grader;
    std::shared_ptr<GenerationBackend> judge;
    std::unique_ptr<ModelGrader> model_grader;
    std::unique_ptr<NoisyGrader> noisy_grader;
    Grader* op_grader = nullptr;
    std::unique_ptr<SimDifficultyEstimator> sim_difficulty;
    std::shared_ptr<GenerationBackend> difficulty_backend;  // model estimators are per seed
    TemplateOverrides overrides;
    bool has_overrides = false;
};

std::unique_ptr<Rig> build_rig(RunConfig config, fs::path config_dir) {
    auto rig = std::make_unique<Rig>();
    rig->config = std::move(config);
    rig->config_dir = std::move(config_dir);
    rig->corpus = load_corpus(resolve_against(rig->config_dir, rig->config.corpus_path));

    const RunConfig& cfg = rig->config;
    bool sim_backend = cfg.backend.kind == BackendKind::sim;
    bool needs_similar = has_policy(cfg.policies, PolicyKind::evolve_similar);

    switch (cfg.embedder.kind) {
        case EmbedderKind::hashing:
            rig->embedder = std::make_unique<HashingEmbedder>(cfg.embedder.dim);
            break;
        case EmbedderKind::metadata:
            rig->embedder = std::make_unique<MetadataEmbedder>();
            break;
        case EmbedderKind::remote: {
            RemoteEmbedderConfig rc = cfg.embedder.remote;
            rc.api_key = require_env(cfg.embedder.api_key_env, "remote embedder");
            if (!rc.cache_path.empty()) {
                rc.cache_path = resolve_against(rig->config_dir, rc.cache_path);
            }
            rig->embedder = std::make_unique<RemoteEmbedder>(std::move(rc));
            break;
        }
    }

    // The store exists whenever something consumes similarities; remote
    // embedders are only billed when a policy actually needs them.
    if (sim_backend || needs_similar) {
        rig->store = EmbeddingStore::build(rig->corpus, *rig->embedder);
        rig->has_store = true;
    }
    if (needs_similar && cfg.neighborhood_domain == NeighborhoodDomain::full_set &&
        rig->corpus.size() > 1) {
        rig->neighbors =
            build_neighbor_index(rig->corpus, *rig->embedder, static_cast<size_t>(cfg.P));
        rig->has_neighbors = true;
    }

    if (sim_backend) {
        SimParams params{cfg.sim.alpha, cfg.sim.tau, cfg.sim.eta, cfg.decoding.temperature};
        rig->backend = std::make_unique<SimBackend>(
            rig->corpus, rig->store, sim_profiles_from_corpus(rig->corpus, cfg.sim.defaults),
            params);
    } else {
        HttpBackendConfig hc = cfg.backend.http;
        hc.api_key = require_env(cfg.backend.api_key_env, "generation backend");
        if (!hc.cache_path.empty()) hc.cache_path = resolve_against(rig->config_dir, hc.cache_path);
        rig->backend = std::make_unique<HttpChatBackend>(std::move(hc));
    }

    SandboxLimits limits;
    limits.wall_time_s = cfg.sandbox.wall_time_s;
    limits.memory_bytes = cfg.sandbox.memory_bytes;
    rig->sandbox = std::make_unique<SandboxRunner>(cfg.sandbox.python_path);
    rig->eval_grader =
        std::make_unique<GroundTruthGrader>(cfg.gamma, rig->sandbox.get(), limits);

    Grader* base_op = rig->eval_grader.get();
    if (cfg.grader.kind == GraderKind::model) {
        HttpBackendConfig jc = cfg.grader.judge;
        jc.api_key = require_env(cfg.grader.judge_api_key_env, "judge model");
        if (!jc.cache_path.empty()) jc.cache_path = resolve_against(rig->config_dir, jc.cache_path);
        rig->judge = std::make_shared<HttpChatBackend>(std::move(jc));
        rig->model_grader = std::make_unique<ModelGrader>(rig->judge, cfg.gamma);
        base_op = rig->model_grader.get();
    }
    if (cfg.grader.flip_prob > 0.0) {
        rig->noisy_grader =
            std::make_unique<NoisyGrader>(*base_op, cfg.grader.flip_prob, cfg.gamma);
        rig->op_grader = rig->noisy_grader.get();
    } else {
        rig->op_grader = base_op;
    }

    bool needs_difficulty =
        has_policy(cfg.policies, PolicyKind::difficulty_aware) && cfg.R > cfg.R_warm;
    if (needs_difficulty) {
        if (cfg.difficulty.kind == DifficultyKind::sim) {
            rig->sim_difficulty = std::make_unique<SimDifficultyEstimator>(
                sim_profiles_from_corpus(rig->corpus, cfg.sim.defaults));
        } else {
            HttpBackendConfig dc = cfg.difficulty.estimator;
            dc.api_key = require_env(cfg.difficulty.api_key_env, "difficulty estimator");
            if (!dc.cache_path.empty()) {
                dc.cache_path = resolve_against(rig->config_dir, dc.cache_path);
            }
            rig->difficulty_backend = std::make_shared<HttpChatBackend>(std::move(dc));
        }
    }

    if (!cfg.templates_dir.empty()) {
        rig->overrides = TemplateOverrides::load(resolve_against(rig->config_dir, cfg.templates_dir));
        rig->has_overrides = true;
    }
    return rig;
}

RunEnv make_env(Rig& rig, int engine_in_flight) {
    RunEnv env;
    env.backend = rig.backend.get();
    env.op_grader = rig.op_grader;
    env.eval_grader = rig.eval_grader.get();
    if (rig.has_store) env.embeddings = &rig.store;
    if (rig.has_neighbors) env.neighbors = &rig.neighbors;
    if (rig.sim_difficulty) env.difficulty = rig.sim_difficulty.get();
    if (rig.has_overrides) env.overrides = &rig.overrides;
    env.embedder_id = rig.embedder->id();
    env.max_in_flight = engine_in_flight;
    return env;
}

// What the token-matched baselines read off a finished elimination run:
// its final cumulative output tokens (uniform's stopping budget) and its
// realized per-round sample counts (difficulty-aware round budgets).
struct ElimStats {
    long long output_total = 0;
    std::map<int, long long> round_samples;
};

ElimStats elim_stats_from_log(const RunLog& log) {
    ElimStats stats;
    if (!log.reports.empty()) stats.output_total = log.reports.back().tokens_cum.output;
    int total_rounds = RunConfig::from_json(log.meta.config).R;
    for (int r = 1; r <= total_rounds; ++r) stats.round_samples[r] = 0;
    for (const ResponseRecord& record : log.records) ++stats.round_samples[record.round];
    // The planner treats a zero budget as "use the default", so the floor
    // is one sample; the min-1 clamp makes the outcomes identical anyway.
    for (auto& [round, count] : stats.round_samples) count = std::max<long long>(count, 1);
    return stats;
}

struct RunOutcome {
    bool ok = false;
    std::string error;
    RunLog log;
};

RunOutcome execute_one(Rig& rig, const RunEntry& entry, const fs::path& out_dir,
                       int engine_in_flight, const std::map<uint64_t, ElimStats>& elim_stats,
                       bool resume_mode) {
    RunOutcome outcome;
    try {
        RunEnv env = make_env(rig, engine_in_flight);
        std::unique_ptr<DifficultyEstimator> per_run_difficulty;
        if (entry.policy == PolicyKind::difficulty_aware && rig.difficulty_backend) {
            per_run_difficulty =
                std::make_unique<ModelDifficultyEstimator>(rig.difficulty_backend, entry.seed);
            env.difficulty = per_run_difficulty.get();
        }
        auto it = elim_stats.find(entry.seed);
        if (it != elim_stats.end()) {
            if (entry.policy == PolicyKind::uniform) {
                env.uniform_output_budget = it->second.output_total;
            }
            if (entry.policy == PolicyKind::difficulty_aware) {
                env.da_round_budgets = it->second.round_samples;
            }
        }
        fs::path log_path = out_dir / entry.log_name;
        outcome.log = resume_mode && fs::exists(log_path)
                          ? resume_experiment(rig.config, rig.corpus, log_path, env)
                          : run_experiment(rig.config, rig.corpus, entry.policy, entry.seed,
                                           env, log_path);
        outcome.ok = true;
    } catch (const std::exception& e) {
        outcome.error = e.what();
    }
    return outcome;
}

// Runs the given manifest entries on a pool of `flag_in_flight` workers,
// each owning one engine at a time. Leftover concurrency under the flag is
// handed to the engines' in-round fan-out, so total in-flight generation
// never exceeds the flag.
void run_phase(Rig& rig, Manifest& manifest, const std::vector<size_t>& indices,
               const fs::path& out_dir, int flag_in_flight,
               const std::map<uint64_t, ElimStats>& elim_stats, bool resume_mode,
               std::map<uint64_t, ElimStats>* collected) {
    if (indices.empty()) return;
    int pool = std::max(1, std::min<int>(flag_in_flight, static_cast<int>(indices.size())));
    int engine_in_flight = std::max(1, flag_in_flight / pool);

    std::atomic<size_t> next{0};
    std::mutex mutex;  // manifest entries, manifest file, collected stats
    auto worker = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= indices.size()) return;
            RunEntry& entry = manifest.runs[indices[i]];
            RunOutcome outcome =
                execute_one(rig, entry, out_dir, engine_in_flight, elim_stats, resume_mode);
            std::lock_guard<std::mutex> lock(mutex);
            if (outcome.ok) {
                entry.status = "complete";
                entry.rounds = outcome.log.last_complete_round;
                entry.error.clear();
                if (collected && entry.policy == PolicyKind::elimination) {
                    (*collected)[entry.seed] = elim_stats_from_log(outcome.log);
                }
            } else {
                entry.status = "aborted";
                entry.error = outcome.error;
            }
            write_manifest(out_dir, manifest);
        }
    };

    if (pool == 1) {
        worker();
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(pool));
    for (int i = 0; i < pool; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
}

// Tail of both run and resume: elimination first so the token-matched
// baselines can read its budgets, then everything else. Dependents of a
// failed elimination run are skipped, not run wrong.
int run_manifest(Rig& rig, Manifest& manifest, const fs::path& out_dir, int max_in_flight,
                 bool resume_mode) {
    std::vector<size_t> elim_indices, rest_indices;
    for (size_t i = 0; i < manifest.runs.size(); ++i) {
        if (manifest.runs[i].status == "complete") continue;
        (manifest.runs[i].policy == PolicyKind::elimination ? elim_indices : rest_indices)
            .push_back(i);
    }

    std::map<uint64_t, ElimStats> elim_stats;
    run_phase(rig, manifest, elim_indices, out_dir, max_in_flight, {}, resume_mode,
              &elim_stats);

    bool matching = has_policy(rig.config.policies, PolicyKind::elimination);
    if (matching) {
        // Budgets may come from runs finished in an earlier invocation.
        for (const RunEntry& entry : manifest.runs) {
            if (entry.policy != PolicyKind::elimination || entry.status != "complete") continue;
            if (elim_stats.count(entry.seed)) continue;
            try {
                elim_stats[entry.seed] = elim_stats_from_log(load_run_log(out_dir / entry.log_name));
            } catch (const std::exception&) {
                // Unreadable log: dependents below get skipped.
            }
        }
        std::vector<size_t> runnable;
        for (size_t i : rest_indices) {
            RunEntry& entry = manifest.runs[i];
            bool needs_budget = entry.policy == PolicyKind::uniform ||
                                entry.policy == PolicyKind::difficulty_aware;
            if (needs_budget && !elim_stats.count(entry.seed)) {
                entry.status = "skipped";
                entry.error = "elimination run for seed " + std::to_string(entry.seed) +
                              " did not complete";
            } else {
                runnable.push_back(i);
            }
        }
        write_manifest(out_dir, manifest);
        rest_indices = std::move(runnable);
    }

    run_phase(rig, manifest, rest_indices, out_dir, max_in_flight, elim_stats, resume_mode,
              nullptr);

    bool all_ok = true;
    for (const RunEntry& entry : manifest.runs) {
        std::cout << entry.status << ' ' << to_string(entry.policy) << " seed=" << entry.seed
                  << " rounds=" << entry.rounds << " log=" << entry.log_name << '\n';
        all_ok = all_ok && entry.status == "complete";
    }
    return all_ok ? kExitOk : kExitRuntime;
}

int cmd_run(const std::string& config_arg, const std::string& out_arg,
            const std::string& seeds_csv, const std::string& policies_csv, int max_in_flight,
            bool force) {
    fs::path out_dir = out_arg;
    std::unique_ptr<Rig> rig;
    fs::path config_path;
    try {
        config_path = fs::absolute(config_arg);
        RunConfig config = load_config(config_path.string());
        if (!seeds_csv.empty()) config.seeds = parse_seeds(seeds_csv);
        if (!policies_csv.empty()) config.policies = parse_policies(policies_csv);
        config.validate();
        rig = build_rig(std::move(config), config_path.parent_path());
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitValidation;
    }

    try {
        fs::create_directories(out_dir);
    } catch (const std::exception& e) {
        std::cerr << "cannot create " << out_dir.string() << ": " << e.what() << '\n';
        return kExitValidation;
    }
    if (fs::exists(out_dir / "manifest.json") && !force) {
        std::cerr << "refusing to rerun into " << out_dir.string()
                  << ": manifest.json already exists (pass --force to overwrite)\n";
        return kExitValidation;
    }

    Manifest manifest;
    manifest.config_path = config_path.string();
    manifest.corpus_path =
        fs::absolute(resolve_against(rig->config_dir, rig->config.corpus_path)).string();
    manifest.base_digest = rig->config.base_digest();
    manifest.corpus_digest = sha256_hex(serialize_corpus(rig->corpus));
    manifest.config = rig->config.to_json();
    for (PolicyKind policy : rig->config.policies) {
        for (uint64_t seed : rig->config.seeds) {
            RunEntry entry;
            entry.policy = policy;
            entry.seed = seed;
            entry.log_name = log_name_for(policy, seed);
            manifest.runs.push_back(std::move(entry));
        }
    }
    write_manifest(out_dir, manifest);

    return run_manifest(*rig, manifest, out_dir, max_in_flight, false);
}

int cmd_resume(const std::string& out_arg, int max_in_flight) {
    fs::path out_dir = out_arg;
    Manifest manifest;
    std::unique_ptr<Rig> rig;
    try {
        manifest = read_manifest(out_dir);
        RunConfig config = RunConfig::from_json(manifest.config);
        config.validate();
        rig = build_rig(std::move(config), fs::path(manifest.config_path).parent_path());
        if (rig->config.base_digest() != manifest.base_digest) {
            throw ConfigError("manifest config digest does not match its recorded base digest");
        }
    } catch (const std::exception& e) {
        std::cerr << "resume error: " << e.what() << '\n';
        return kExitValidation;
    }

    return run_manifest(*rig, manifest, out_dir, max_in_flight, true);
}

// Loads every log the manifest promises, or reports exactly which
// (policy, seed) pairs are missing.
std::vector<RunLog> load_policy_logs(const Manifest& manifest, const fs::path& out_dir,
                                     PolicyKind policy, std::vector<std::string>* missing) {
    std::vector<RunLog> logs;
    for (const RunEntry& entry : manifest.runs) {
        if (entry.policy != policy) continue;
        if (entry.status != "complete" || !fs::exists(out_dir / entry.log_name)) {
            missing->push_back("(" + to_string(entry.policy) + ", seed " +
                               std::to_string(entry.seed) + ")");
            continue;
        }
        logs.push_back(load_run_log(out_dir / entry.log_name));
    }
    return logs;
}

std::vector<PolicyKind> manifest_policies(const Manifest& manifest) {
    std::vector<PolicyKind> order;
    for (const RunEntry& entry : manifest.runs) {
        if (!has_policy(order, entry.policy)) order.push_back(entry.policy);
    }
    return order;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

int cmd_report(const std::string& out_arg) {
    fs::path out_dir = out_arg;
    try {
        Manifest manifest = read_manifest(out_dir);
        RunConfig config = RunConfig::from_json(manifest.config);

        std::vector<std::string> missing;
        std::vector<PolicyAggregate> aggregates;
        std::vector<RunLog> all_logs;
        for (PolicyKind policy : manifest_policies(manifest)) {
            std::vector<RunLog> logs = load_policy_logs(manifest, out_dir, policy, &missing);
            if (!missing.empty()) continue;
            aggregates.push_back(aggregate_report(logs));
            for (RunLog& log : logs) all_logs.push_back(std::move(log));
        }
        if (!missing.empty()) {
            std::cerr << "missing or incomplete runs:";
            for (const std::string& m : missing) std::cerr << ' ' << m;
            std::cerr << '\n';
            return kExitValidation;
        }

        fs::path report_dir = out_dir / "report";
        fs::create_directories(report_dir);
        std::vector<std::string> written;

        write_text(report_dir / "coverage_by_round.txt", round_table(aggregates));
        written.push_back("coverage_by_round.txt");
        if (config.mode == RunMode::self_consistency) {
            write_text(report_dir / "accuracy_by_round.txt",
                       round_table(aggregates, TableMetric::accuracy));
            written.push_back("accuracy_by_round.txt");
        }
        write_text(report_dir / "curves.csv", curves_csv(all_logs));
        written.push_back("curves.csv");

        const PolicyAggregate* baseline = nullptr;
        for (const PolicyAggregate& agg : aggregates) {
            if (agg.policy == PolicyKind::elimination) baseline = &agg;
        }
        if (baseline) {
            for (const PolicyAggregate& agg : aggregates) {
                if (agg.policy == PolicyKind::elimination) continue;
                std::string name = "token_usage_" + to_string(agg.policy) + ".txt";
                write_text(report_dir / name,
                           token_table(compare_tokens(*baseline, agg), to_string(baseline->policy),
                                       to_string(agg.policy)));
                written.push_back(name);
            }
        }

        for (const std::string& name : written) {
            std::cout << (report_dir / name).string() << '\n';
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "report error: " << e.what() << '\n';
        return kExitValidation;
    }
}

int cmd_compare(const std::string& out_arg, const std::string& policies_csv) {
    fs::path out_dir = out_arg;
    try {
        std::vector<PolicyKind> pair = policies_csv.empty()
                                           ? std::vector<PolicyKind>{PolicyKind::elimination,
                                                                     PolicyKind::evolve_similar}
                                           : parse_policies(policies_csv);
        if (pair.size() != 2) {
            throw ConfigError("compare expects --policies baseline,ours (exactly two)");
        }

        Manifest manifest = read_manifest(out_dir);
        std::vector<std::string> missing;
        std::vector<RunLog> baseline_logs =
            load_policy_logs(manifest, out_dir, pair[0], &missing);
        std::vector<RunLog> ours_logs = load_policy_logs(manifest, out_dir, pair[1], &missing);
        if (baseline_logs.empty()) missing.push_back("(" + to_string(pair[0]) + ", any seed)");
        if (ours_logs.empty()) missing.push_back("(" + to_string(pair[1]) + ", any seed)");
        if (!missing.empty()) {
            std::cerr << "missing or incomplete runs:";
            for (const std::string& m : missing) std::cerr << ' ' << m;
            std::cerr << '\n';
            return kExitValidation;
        }

        TokenComparison cmp =
            compare_tokens(aggregate_report(baseline_logs), aggregate_report(ours_logs));
        std::string table = token_table(cmp, to_string(pair[0]), to_string(pair[1]));

        fs::path report_dir = out_dir / "report";
        fs::create_directories(report_dir);
        fs::path out_file = report_dir / ("compare_" + to_string(pair[0]) + "_vs_" +
                                          to_string(pair[1]) + ".txt");
        write_text(out_file, table);
        std::cout << table;
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "compare error: " << e.what() << '\n';
        return kExitValidation;
    }
}

int cmd_validate_config(const std::string& config_arg) {
    try {
        fs::path config_path = fs::absolute(config_arg);
        RunConfig config = load_config(config_path.string());
        config.validate();
        fs::path corpus = resolve_against(config_path.parent_path(), config.corpus_path);
        if (!fs::exists(corpus)) {
            throw ConfigError("corpus file not found: " + corpus.string());
        }
        if (!config.templates_dir.empty()) {
            fs::path templates = resolve_against(config_path.parent_path(), config.templates_dir);
            if (!fs::is_directory(templates)) {
                throw ConfigError("templates_dir is not a directory: " + templates.string());
            }
        }
        std::cout << "ok " << config_arg << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitValidation;
    }
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Budgeted sampling over question corpora with adaptive allocation"};
    app.require_subcommand(1);

    std::string config_arg, out_arg, seeds_csv, policies_csv;
    int max_in_flight = 1;
    bool force = false;

    CLI::App* run = app.add_subcommand("run", "Run every (policy, seed) pair in a config");
    run->add_option("--config", config_arg, "experiment config file")->required();
    run->add_option("--out", out_arg, "output directory for logs and the manifest")->required();
    run->add_option("--seeds", seeds_csv, "comma-separated seed override");
    run->add_option("--policies", policies_csv, "comma-separated policy override");
    run->add_option("--max-in-flight", max_in_flight, "concurrent generation bound")
        ->check(CLI::PositiveNumber);
    run->add_flag("--force", force, "overwrite an existing output directory");

    CLI::App* resume = app.add_subcommand("resume", "Finish interrupted runs in an output dir");
    resume->add_option("--out", out_arg, "output directory holding the manifest")->required();
    resume->add_option("--max-in-flight", max_in_flight, "concurrent generation bound")
        ->check(CLI::PositiveNumber);

    CLI::App* report =
        app.add_subcommand("report", "Aggregate finished runs into tables and curves");
    report->add_option("--out", out_arg, "output directory holding the manifest")->required();

    CLI::App* compare = app.add_subcommand("compare", "Token usage of one policy vs another");
    compare->add_option("--out", out_arg, "output directory holding the manifest")->required();
    compare->add_option("--policies", policies_csv,
                        "baseline,ours (default elimination,evolve_similar)");

    CLI::App* validate = app.add_subcommand("validate-config", "Check a config file and exit");
    validate->add_option("--config", config_arg, "experiment config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (run->parsed()) {
            return cmd_run(config_arg, out_arg, seeds_csv, policies_csv, max_in_flight, force);
        }
        if (resume->parsed()) return cmd_resume(out_arg, max_in_flight);
        if (report->parsed()) return cmd_report(out_arg);
        if (compare->parsed()) return cmd_compare(out_arg, policies_csv);
        if (validate->parsed()) return cmd_validate_config(config_arg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitValidation;
}

int cli_main(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const std::string& arg : args) argv.push_back(arg.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ttc
