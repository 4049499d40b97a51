#include "ttc/engine.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <memory>
#include <thread>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"
#include "ttc/rng.hpp"

namespace ttc {

namespace {

// Modal canonical answer over a pool, ignoring the consensus threshold.
// Ties break to the lexicographically smallest answer, matching
// consensus_select.
std::optional<std::string> modal_answer(const std::vector<ResponseRecord>& pool,
                                        TaskFamily family) {
    std::map<std::string, int> counts;
    for (const ResponseRecord& r : pool) {
        if (auto answer = extract_final_answer(r.text, family)) {
            ++counts[normalize_answer(*answer, family)];
        }
    }
    std::optional<std::string> best;
    int best_count = 0;
    for (const auto& [answer, count] : counts) {
        if (count > best_count) {
            best = answer;
            best_count = count;
        }
    }
    return best;
}

// Folds one record into the state. Shared verbatim between the live engine
// and replay, which is what makes write -> replay an identity.
void apply_response(RunState& state, const ResponseRecord& rec, const QuestionSet& corpus,
                    const RunConfig& config) {
    state.pools[rec.question_id].push_back(rec);
    state.ledger.add(rec.round, rec.question_id,
                     {rec.prompt_tokens, rec.output_tokens, rec.thinking_tokens});
    if (rec.eval_solved) state.eval_solved.insert(rec.question_id);
    if (config.mode == RunMode::standard && rec.op_solved &&
        state.active.erase(rec.question_id) > 0) {
        const Question& q = corpus.by_id(rec.question_id);
        state.retained.retain(rec.question_id,
                              {question_prompt_body(q), rec.text,
                               RetentionReason::first_correct, rec.round});
    }
}

// Round close-out. Self-consistency elimination happens here: a question
// leaves the active set once its pool's modal answer reaches the consensus
// threshold, and the earliest response carrying that answer is retained.
void finish_round(RunState& state, int round, const QuestionSet& corpus,
                  const RunConfig& config) {
    if (config.mode == RunMode::self_consistency) {
        std::vector<std::string> active_now(state.active.begin(), state.active.end());
        for (const std::string& id : active_now) {
            auto pool_it = state.pools.find(id);
            if (pool_it == state.pools.end() || pool_it->second.empty()) continue;
            const Question& q = corpus.by_id(id);
            auto pick = consensus_select(pool_it->second, config.grader.consensus_threshold,
                                         q.task_family);
            if (!pick) continue;
            state.consensus_answers[id] = pick->first;
            state.active.erase(id);
            for (const ResponseRecord& r : pool_it->second) {
                auto answer = extract_final_answer(r.text, q.task_family);
                if (answer && normalize_answer(*answer, q.task_family) == pick->first) {
                    state.retained.retain(id, {question_prompt_body(q), r.text,
                                               RetentionReason::first_correct, round});
                    break;
                }
            }
        }
    }
    state.t = round;
}

RoundReport make_report(const RunState& state, int round, const QuestionSet& corpus,
                        const RunConfig& config) {
    RoundReport report;
    report.round = round;
    double n = static_cast<double>(corpus.size());
    report.coverage = static_cast<double>(state.eval_solved.size()) / n;
    report.op_coverage = static_cast<double>(corpus.size() - state.active.size()) / n;
    if (config.mode == RunMode::self_consistency) {
        int correct = 0;
        for (const Question& q : corpus.questions()) {
            std::optional<std::string> answer;
            if (auto it = state.consensus_answers.find(q.id);
                it != state.consensus_answers.end()) {
                answer = it->second;
            } else if (auto it = state.pools.find(q.id); it != state.pools.end()) {
                answer = modal_answer(it->second, q.task_family);
            }
            if (answer && *answer == normalize_answer(q.ground_truth, q.task_family)) {
                ++correct;
            }
        }
        report.accuracy = correct / n;
    }
    report.active_count = static_cast<int>(state.active.size());
    report.tokens_round = state.ledger.round_total(round);
    report.tokens_cum = state.ledger.cumulative();
    return report;
}

// The demonstration pool prompts draw from. With a noisy operational grader
// the retained pool is widened per round: any sampled-but-unretained
// question contributes its most recent response as a fallback.
DemonstrationPool effective_pool(const RunState& state, const QuestionSet& corpus,
                                 const RunConfig& config) {
    if (!(config.grader.flip_prob > 0.0) || config.mode != RunMode::standard) {
        return state.retained;
    }
    DemonstrationPool pool = state.retained;
    for (const auto& [id, records] : state.pools) {
        if (records.empty() || pool.contains(id)) continue;
        const ResponseRecord& last = records.back();
        pool.retain(id, {question_prompt_body(corpus.by_id(id)), last.text,
                         RetentionReason::fallback_recent, last.round});
    }
    return pool;
}

// Neighborhoods restricted to the current active set, rebuilt every round
// from raw embeddings (similar) or drawn uniformly (random). Demonstrations
// are the neighbors' most recent responses.
std::vector<Demonstration> active_set_demonstrations(const Question& target,
                                                     const RunState& state,
                                                     const QuestionSet& corpus,
                                                     const RunEnv& env, DemoMode mode,
                                                     size_t top_p, RngStream& rng) {
    std::vector<std::string> candidates;
    for (const Question& q : corpus.questions()) {
        if (q.id != target.id && state.active.count(q.id) > 0) candidates.push_back(q.id);
    }
    if (candidates.empty()) return {};
    std::vector<std::string> chosen;
    if (mode == DemoMode::similar) {
        const EmbeddingVector& target_vec = env.embeddings->of(target.id);
        std::vector<std::pair<double, std::string>> ranked;
        ranked.reserve(candidates.size());
        for (const std::string& id : candidates) {
            ranked.push_back({cosine(target_vec, env.embeddings->of(id)), id});
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t i = 0; i < ranked.size() && i < top_p; ++i) chosen.push_back(ranked[i].second);
    } else {
        std::sort(candidates.begin(), candidates.end());
        while (!candidates.empty() && chosen.size() < top_p) {
            size_t pick = static_cast<size_t>(rng.uniform_below(candidates.size()));
            chosen.push_back(candidates[pick]);
            candidates.erase(candidates.begin() + static_cast<ptrdiff_t>(pick));
        }
    }
    std::vector<Demonstration> demos;
    for (const std::string& id : chosen) {
        auto it = state.pools.find(id);
        if (it == state.pools.end() || it->second.empty()) continue;
        demos.push_back({id, question_prompt_body(corpus.by_id(id)), it->second.back().text});
    }
    return demos;
}

struct GenTask {
    const Question* question = nullptr;
    int sample_index = 0;
    std::shared_ptr<const PromptSpec> prompt;
};

class Engine {
public:
    Engine(const RunConfig& config, const QuestionSet& corpus, PolicyKind policy, uint64_t seed,
           RunEnv& env)
        : config_(config), corpus_(corpus), policy_(policy), seed_(seed), env_(env) {
        for (const Question& q : corpus.questions()) all_ids_.push_back(q.id);
    }

    RunMeta make_meta() const {
        RunMeta meta;
        meta.policy = policy_;
        meta.seed = seed_;
        meta.base_digest = config_.base_digest();
        meta.corpus_digest = sha256_hex(serialize_corpus(corpus_));
        meta.backend_id = env_.backend->id();
        meta.op_grader_id = env_.op_grader->id();
        meta.eval_grader_id = env_.eval_grader->id();
        meta.embedder_id = env_.embedder_id;
        meta.config = config_.to_json();
        return meta;
    }

    void check_env() const {
        if (corpus_.empty()) throw Error("cannot run on an empty corpus");
        if (!env_.backend) throw Error("run requires a generation backend");
        if (!env_.op_grader || !env_.eval_grader) throw Error("run requires both graders");
        bool adaptive_rounds = config_.R > config_.R_warm;
        // A single-question corpus has an empty neighborhood by definition
        // and legitimately runs its adaptive rounds with zero demonstrations.
        if (adaptive_rounds && policy_ == PolicyKind::evolve_similar && corpus_.size() > 1) {
            if (config_.neighborhood_domain == NeighborhoodDomain::full_set &&
                !env_.neighbors) {
                throw Error("evolve_similar needs a neighbor index");
            }
            if (config_.neighborhood_domain == NeighborhoodDomain::active_set &&
                !env_.embeddings) {
                throw Error("active-set neighborhoods need an embedding store");
            }
        }
        if (adaptive_rounds && policy_ == PolicyKind::difficulty_aware && !env_.difficulty) {
            throw Error("difficulty_aware needs a difficulty estimator");
        }
        if (env_.max_in_flight < 1) throw Error("max_in_flight must be >= 1");
    }

    void init_state(RunState& state) const {
        state.policy = policy_;
        state.seed = seed_;
        for (const std::string& id : all_ids_) state.active.insert(id);
    }

    // Rounds from..R on top of `state`, appending to `log` (and the writer,
    // when present). Any failure leaves the log ending at the last complete
    // round's checkpoint.
    void run_rounds(RunState& state, int from, RunLog& log, RunLogWriter* writer) {
        for (int round = from; round <= config_.R; ++round) {
            RoundPlan plan = make_plan(state, round);
            std::vector<ResponseRecord> records = execute_round(state, plan, round);
            for (ResponseRecord& rec : records) {
                if (writer) writer->append_response(rec);
                apply_response(state, rec, corpus_, config_);
                log.records.push_back(std::move(rec));
            }
            finish_round(state, round, corpus_, config_);
            RoundReport report = make_report(state, round, corpus_, config_);
            std::string digest = state_digest(state);
            log.reports.push_back(report);
            log.round_digests[round] = digest;
            log.last_complete_round = round;
            if (writer) {
                writer->append_round(report);
                writer->append_checkpoint(round, digest);
                writer->flush();
            }
            if (policy_ == PolicyKind::uniform && env_.uniform_output_budget > 0 &&
                state.ledger.cumulative().output >= env_.uniform_output_budget) {
                break;
            }
        }
        log.final_state = state;
    }

private:
    RoundPlan make_plan(const RunState& state, int round) {
        PlanContext context;
        context.all_ids = all_ids_;
        for (const std::string& id : all_ids_) {
            if (state.active.count(id) > 0) context.active_ids.push_back(id);
        }
        if (policy_ == PolicyKind::difficulty_aware && round > config_.R_warm) {
            context.difficulties = env_.difficulty->estimate_all(corpus_.questions());
            auto it = env_.da_round_budgets.find(round);
            if (it != env_.da_round_budgets.end()) context.sample_budget = it->second;
        }
        return plan_round(policy_, context, round, config_);
    }

    std::vector<ResponseRecord> execute_round(const RunState& state, const RoundPlan& plan,
                                              int round) {
        DemonstrationPool pool;
        bool need_pool = plan.demo_mode != DemoMode::none &&
                         config_.neighborhood_domain == NeighborhoodDomain::full_set;
        if (need_pool) pool = effective_pool(state, corpus_, config_);

        std::vector<GenTask> tasks;
        for (const auto& [id, count] : plan.allocations) {
            if (count <= 0) continue;
            const Question& q = corpus_.by_id(id);
            PromptStage stage = plan.prompt_stage.at(id);
            std::vector<Demonstration> demos;
            if (stage == PromptStage::adaptive && plan.demo_mode != DemoMode::none) {
                RngStream demo_rng(derive_seed(seed_, demo_seed_path(seed_, id, round)));
                DemoSelection selection = plan.demo_mode == DemoMode::similar
                                              ? DemoSelection::similar
                                              : DemoSelection::random;
                if (config_.neighborhood_domain == NeighborhoodDomain::full_set) {
                    static const NeighborIndex empty_index;
                    const NeighborIndex* index = env_.neighbors ? env_.neighbors : &empty_index;
                    demos = select_demonstrations(q, pool, *index, selection,
                                                  static_cast<size_t>(config_.P), demo_rng);
                } else {
                    demos = active_set_demonstrations(q, state, corpus_, env_, plan.demo_mode,
                                                      static_cast<size_t>(config_.P), demo_rng);
                }
            }
            auto prompt = std::make_shared<const PromptSpec>(
                render_prompt(q, std::move(demos), stage, env_.overrides));
            if (prompt->rendered_text.size() > config_.max_prompt_chars) {
                throw Error("prompt for question \"" + id + "\" is " +
                            std::to_string(prompt->rendered_text.size()) +
                            " chars, over the max_prompt_chars limit of " +
                            std::to_string(config_.max_prompt_chars));
            }
            for (int k = 0; k < count; ++k) tasks.push_back({&q, k, prompt});
        }

        std::vector<ResponseRecord> results(tasks.size());
        std::vector<std::exception_ptr> failures(tasks.size());
        std::atomic<size_t> next{0};
        auto worker = [&] {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= tasks.size()) return;
                try {
                    results[i] = run_task(tasks[i], plan, round);
                } catch (...) {
                    failures[i] = std::current_exception();
                }
            }
        };
        size_t thread_count = std::min(static_cast<size_t>(env_.max_in_flight), tasks.size());
        if (thread_count <= 1) {
            worker();
        } else {
            std::vector<std::thread> threads;
            for (size_t i = 0; i < thread_count; ++i) threads.emplace_back(worker);
            for (std::thread& t : threads) t.join();
        }
        for (size_t i = 0; i < tasks.size(); ++i) {
            if (failures[i]) std::rethrow_exception(failures[i]);
        }
        return results;
    }

    ResponseRecord run_task(const GenTask& task, const RoundPlan& plan, int round) {
        const Question& q = *task.question;
        ResponseRecord rec;
        rec.question_id = q.id;
        rec.round = round;
        rec.sample_index = task.sample_index;
        rec.stage = task.prompt->stage;
        rec.prompt_digest = task.prompt->text_digest;
        for (const Demonstration& d : task.prompt->demonstrations) {
            rec.demo_source_ids.push_back(d.source_question_id);
        }
        rec.temperature = plan.decoding.temperature;
        rec.seed_path = gen_seed_path(seed_, q.id, round, task.sample_index);

        SeededRng rng(derive_seed(seed_, rec.seed_path));
        GenerationResult gen = env_.backend->generate(*task.prompt, plan.decoding, rng);
        rec.backend_id = gen.backend_id;
        rec.text = gen.text;
        rec.extracted_answer = extract_final_answer(gen.text, q.task_family);
        rec.prompt_tokens = gen.prompt_tokens;
        rec.output_tokens = gen.output_tokens;
        rec.thinking_tokens = gen.thinking_tokens;
        rec.truncated = gen.truncated;

        GradeKey key{seed_, round, task.sample_index};
        RewardOutcome op = env_.op_grader->grade(q, gen.text, key);
        rec.op_score = op.score;
        rec.op_solved = op.solved;
        rec.grader_id = op.grader_id;
        if (env_.eval_grader == env_.op_grader) {
            rec.eval_score = op.score;
            rec.eval_solved = op.solved;
        } else {
            RewardOutcome eval = env_.eval_grader->grade(q, gen.text, key);
            rec.eval_score = eval.score;
            rec.eval_solved = eval.solved;
        }
        return rec;
    }

    const RunConfig& config_;
    const QuestionSet& corpus_;
    PolicyKind policy_;
    uint64_t seed_;
    RunEnv& env_;
    std::vector<std::string> all_ids_;
};

}  // namespace

RunState replay_state(const RunLog& log, const QuestionSet& corpus) {
    RunConfig config = RunConfig::from_json(log.meta.config);
    RunState state;
    state.policy = log.meta.policy;
    state.seed = log.meta.seed;
    for (const Question& q : corpus.questions()) state.active.insert(q.id);
    for (int round = 1; round <= log.last_complete_round; ++round) {
        for (const ResponseRecord& rec : log.records) {
            if (rec.round == round) apply_response(state, rec, corpus, config);
        }
        finish_round(state, round, corpus, config);
        auto it = log.round_digests.find(round);
        if (it != log.round_digests.end() && it->second != state_digest(state)) {
            throw LogError("replayed state diverges from the checkpoint at round " +
                           std::to_string(round));
        }
    }
    return state;
}

RunLog run_experiment(const RunConfig& config, const QuestionSet& corpus, PolicyKind policy,
                      uint64_t seed, RunEnv& env, const std::filesystem::path& log_path) {
    config.validate();
    Engine engine(config, corpus, policy, seed, env);
    engine.check_env();

    RunLog log;
    log.meta = engine.make_meta();
    std::optional<RunLogWriter> writer;
    if (!log_path.empty()) writer.emplace(log_path, log.meta);

    RunState state;
    engine.init_state(state);
    engine.run_rounds(state, 1, log, writer ? &*writer : nullptr);
    return log;
}

RunLog resume_experiment(const RunConfig& config, const QuestionSet& corpus,
                         const std::filesystem::path& log_path, RunEnv& env) {
    config.validate();
    RunLog log = load_run_log(log_path);
    if (log.meta.base_digest != config.base_digest()) {
        throw ConfigError("config does not match run log " + log_path.string() +
                          " (base digest differs)");
    }
    if (log.meta.corpus_digest != sha256_hex(serialize_corpus(corpus))) {
        throw ConfigError("corpus does not match run log " + log_path.string());
    }

    RunState state = replay_state(log, corpus);
    std::erase_if(log.records,
                  [&](const ResponseRecord& r) { return r.round > log.last_complete_round; });
    if (state.t >= config.R) {
        log.final_state = std::move(state);
        return log;
    }

    Engine resumed(config, corpus, log.meta.policy, log.meta.seed, env);
    resumed.check_env();
    RunLogWriter writer = RunLogWriter::append_at(log_path, log.last_complete_offset);
    resumed.run_rounds(state, state.t + 1, log, &writer);
    return log;
}

}  // namespace ttc
