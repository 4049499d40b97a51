#include "ttc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ttc/error.hpp"

namespace ttc {

namespace {

double sample_std(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double sum_sq = 0.0;
    for (double v : values) sum_sq += (v - mean) * (v - mean);
    return std::sqrt(sum_sq / static_cast<double>(values.size() - 1));
}

double mean_of(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    return values.empty() ? 0.0 : mean / static_cast<double>(values.size());
}

// Shortest round-trip decimal form, the same one the log files use.
std::string number_cell(double v) { return nlohmann::json(v).dump(); }

std::string thousands(long long v) {
    std::string digits = std::to_string(v < 0 ? -v : v);
    std::string out;
    int since_sep = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (since_sep == 3) {
            out.push_back(',');
            since_sep = 0;
        }
        out.push_back(*it);
        ++since_sep;
    }
    if (v < 0) out.push_back('-');
    std::reverse(out.begin(), out.end());
    return out;
}

std::string percent_cell(double mean, double band) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f ±%.1f", mean * 100.0, band * 100.0);
    return buf;
}

std::string render_columns(const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    std::string out;
    for (const auto& row : rows) {
        for (size_t c = 0; c < row.size(); ++c) {
            if (c > 0) out += "  ";
            // First column left-aligned, numbers right-aligned.
            size_t pad = widths[c] - row[c].size();
            if (c == 0) {
                out += row[c];
                out.append(pad, ' ');
            } else {
                out.append(pad, ' ');
                out += row[c];
            }
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    }
    return out;
}

}  // namespace

PolicyAggregate aggregate_report(const std::vector<RunLog>& logs) {
    if (logs.empty()) throw Error("aggregate_report needs at least one run log");

    PolicyAggregate agg;
    agg.policy = logs.front().meta.policy;
    agg.base_digest = logs.front().meta.base_digest;
    int total_rounds = RunConfig::from_json(logs.front().meta.config).R;

    for (const RunLog& log : logs) {
        if (log.meta.base_digest != agg.base_digest) {
            throw Error("cannot aggregate logs from different experiments (base digest " +
                        log.meta.base_digest + " vs " + agg.base_digest + ")");
        }
        if (log.meta.policy != agg.policy) {
            throw Error("cannot aggregate logs across policies (" +
                        to_string(log.meta.policy) + " vs " + to_string(agg.policy) + ")");
        }
        if (log.reports.empty()) {
            throw Error("run log for seed " + std::to_string(log.meta.seed) +
                        " has no completed rounds");
        }
        agg.seeds.push_back(log.meta.seed);
    }

    agg.rounds.resize(static_cast<size_t>(total_rounds));
    for (int round = 1; round <= total_rounds; ++round) {
        RoundAggregate& cell = agg.rounds[static_cast<size_t>(round - 1)];
        cell.round = round;
        std::vector<double> coverages, accuracies, round_tokens, cum_prompt, cum_output,
            cum_thinking;
        for (const RunLog& log : logs) {
            // A run that stopped early keeps its final coverage and totals
            // and spends nothing afterwards.
            size_t idx = std::min(static_cast<size_t>(round), log.reports.size()) - 1;
            const RoundReport& report = log.reports[idx];
            bool executed = static_cast<size_t>(round) <= log.reports.size();
            coverages.push_back(report.coverage);
            accuracies.push_back(report.accuracy);
            round_tokens.push_back(
                executed ? static_cast<double>(report.tokens_round.total()) : 0.0);
            cum_prompt.push_back(static_cast<double>(report.tokens_cum.prompt));
            cum_output.push_back(static_cast<double>(report.tokens_cum.output));
            cum_thinking.push_back(static_cast<double>(report.tokens_cum.thinking));
        }
        cell.mean_coverage = mean_of(coverages);
        cell.coverage_half_std = 0.5 * sample_std(coverages);
        cell.mean_accuracy = mean_of(accuracies);
        cell.mean_round_tokens = mean_of(round_tokens);
        cell.mean_cum_prompt = mean_of(cum_prompt);
        cell.mean_cum_output = mean_of(cum_output);
        cell.mean_cum_thinking = mean_of(cum_thinking);
    }
    return agg;
}

std::string curves_csv(const std::vector<RunLog>& logs) {
    std::string out =
        "policy,seed,round,coverage,output_tokens_cum,prompt_tokens_cum,thinking_tokens_cum\n";
    for (const RunLog& log : logs) {
        for (const RoundReport& report : log.reports) {
            out += to_string(log.meta.policy);
            out += ',';
            out += std::to_string(log.meta.seed);
            out += ',';
            out += std::to_string(report.round);
            out += ',';
            out += number_cell(report.coverage);
            out += ',';
            out += std::to_string(report.tokens_cum.output);
            out += ',';
            out += std::to_string(report.tokens_cum.prompt);
            out += ',';
            out += std::to_string(report.tokens_cum.thinking);
            out += '\n';
        }
    }
    return out;
}

std::string round_table(const std::vector<PolicyAggregate>& aggregates, TableMetric metric) {
    if (aggregates.empty()) throw Error("round table needs at least one aggregate");
    size_t rounds = 0;
    for (const PolicyAggregate& agg : aggregates) rounds = std::max(rounds, agg.rounds.size());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"Method"};
    for (size_t r = 0; r < rounds; ++r) header.push_back("R" + std::to_string(r));
    rows.push_back(std::move(header));

    for (const PolicyAggregate& agg : aggregates) {
        std::vector<std::string> row = {to_string(agg.policy)};
        for (size_t r = 0; r < rounds; ++r) {
            const RoundAggregate& cell = agg.rounds[std::min(r, agg.rounds.size() - 1)];
            double value = metric == TableMetric::coverage ? cell.mean_coverage
                                                           : cell.mean_accuracy;
            double band = metric == TableMetric::coverage ? cell.coverage_half_std : 0.0;
            row.push_back(percent_cell(value, band));
        }
        rows.push_back(std::move(row));
    }
    return render_columns(rows);
}

TokenComparison compare_tokens(const PolicyAggregate& baseline, const PolicyAggregate& ours) {
    if (baseline.base_digest != ours.base_digest) {
        throw Error("cannot compare token usage across different experiments");
    }
    size_t rounds = std::max(baseline.rounds.size(), ours.rounds.size());
    TokenComparison cmp;
    for (size_t r = 0; r < rounds; ++r) {
        double b = r < baseline.rounds.size() ? baseline.rounds[r].mean_round_tokens : 0.0;
        double o = r < ours.rounds.size() ? ours.rounds[r].mean_round_tokens : 0.0;
        cmp.baseline_rounds.push_back(b);
        cmp.ours_rounds.push_back(o);
        cmp.savings.push_back(b - o);
        cmp.baseline_total += b;
        cmp.ours_total += o;
    }
    cmp.savings_total = cmp.baseline_total - cmp.ours_total;
    return cmp;
}

std::string token_table(const TokenComparison& comparison, const std::string& baseline_label,
                        const std::string& ours_label) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"Method"};
    for (size_t r = 0; r < comparison.baseline_rounds.size(); ++r) {
        header.push_back("R" + std::to_string(r));
    }
    header.push_back("Total");
    rows.push_back(std::move(header));

    auto row_of = [](const std::string& label, const std::vector<double>& values,
                     double total) {
        std::vector<std::string> row = {label};
        for (double v : values) row.push_back(thousands(std::llround(v)));
        row.push_back(thousands(std::llround(total)));
        return row;
    };
    rows.push_back(row_of(baseline_label, comparison.baseline_rounds,
                          comparison.baseline_total));
    rows.push_back(row_of(ours_label, comparison.ours_rounds, comparison.ours_total));
    rows.push_back(row_of("Savings", comparison.savings, comparison.savings_total));
    return render_columns(rows);
}

}  // namespace ttc
