#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttc/engine.hpp"

namespace ttc {

// Cross-seed statistics for one round of one policy. Bands are half a
// sample standard deviation; a single seed gets a zero-width band.
struct RoundAggregate {
    int round = 1;
    double mean_coverage = 0.0;
    double coverage_half_std = 0.0;
    double mean_accuracy = 0.0;
    double mean_round_tokens = 0.0;  // prompt + output + thinking spent in the round
    double mean_cum_prompt = 0.0;
    double mean_cum_output = 0.0;
    double mean_cum_thinking = 0.0;
};

struct PolicyAggregate {
    PolicyKind policy = PolicyKind::elimination;
    std::string base_digest;
    std::vector<uint64_t> seeds;
    std::vector<RoundAggregate> rounds;  // exactly R entries, index = round - 1
};

// Folds one policy's logs across seeds. All logs must share the experiment
// identity (base digest) and the policy. Runs that stopped early carry their
// final coverage and cumulative totals forward and spend nothing in the
// rounds they skipped.
PolicyAggregate aggregate_report(const std::vector<RunLog>& logs);

// Plot-ready rows, one per (policy, seed, round) actually executed.
// Columns: policy,seed,round,coverage,output_tokens_cum,prompt_tokens_cum,
// thinking_tokens_cum.
std::string curves_csv(const std::vector<RunLog>& logs);

enum class TableMetric { coverage, accuracy };

// Per-policy round table: one row per aggregate, columns R0..R(R-1), cells
// "mean ±band" in percent. Display round labels are zero-based.
std::string round_table(const std::vector<PolicyAggregate>& aggregates,
                        TableMetric metric = TableMetric::coverage);

// Per-round token usage of a baseline against another policy, with the
// baseline-minus-ours savings per round and in total.
struct TokenComparison {
    std::vector<double> baseline_rounds;
    std::vector<double> ours_rounds;
    std::vector<double> savings;
    double baseline_total = 0.0;
    double ours_total = 0.0;
    double savings_total = 0.0;
};

TokenComparison compare_tokens(const PolicyAggregate& baseline, const PolicyAggregate& ours);

// Renders a comparison as rows Baseline/Ours/Savings with columns
// R0..R(R-1) and Total, token counts rounded to whole tokens.
std::string token_table(const TokenComparison& comparison, const std::string& baseline_label,
                        const std::string& ours_label);

}  // namespace ttc
