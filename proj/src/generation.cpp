#include "ttc/generation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"
#include "ttc/http.hpp"

namespace ttc {

using nlohmann::json;

std::string decoding_params_digest(const DecodingParams& params) {
    json obj;
    obj["temperature"] = params.temperature;
    obj["top_p"] = params.top_p;
    obj["top_k"] = params.top_k;
    obj["max_output_tokens"] = params.max_output_tokens;
    obj["thinking_budget"] = params.thinking_budget;
    return sha256_hex(obj.dump());
}

double sim_effective_success_prob(const SimQuestionProfile& profile,
                                  const std::vector<double>& demo_similarities, double alpha,
                                  double tau, double temp_bonus) {
    double p = profile.base_success_prob + temp_bonus;
    for (double sim : demo_similarities) p += alpha * std::max(0.0, sim - tau);
    return std::clamp(p, 0.0, 1.0);
}

std::pair<long long, long long> sim_token_cost(const SimQuestionProfile& profile, bool succeeded,
                                               long long thinking_budget, RngStream& rng) {
    double mean = static_cast<double>(succeeded ? profile.success_token_mean
                                                : profile.failure_token_mean);
    long long output = static_cast<long long>(rng.geometric(mean));
    long long thinking = 0;
    if (thinking_budget > 0) {
        double think_mean = std::min(static_cast<double>(thinking_budget) / 2.0,
                                     static_cast<double>(profile.failure_token_mean));
        thinking = static_cast<long long>(rng.geometric(std::max(1.0, think_mean)));
    }
    return {output, thinking};
}

namespace {

std::string python_string_literal(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        unsigned char uc = static_cast<unsigned char>(c);
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '"': out += "\\\""; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (uc < 0x20 || uc >= 0x7f) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\x%02x", uc);
                    out += buf;
                } else {
                    out.push_back(c);
                }
        }
    }
    out.push_back('"');
    return out;
}

// A program that answers every known test case; the sim's "correct" code.
std::string lookup_table_program(const Question& q) {
    std::string out = "import sys\n\ntable = {\n";
    for (const CodeTestCase& tc : q.test_cases) {
        out += "    " + python_string_literal(tc.input) + ": " +
               python_string_literal(tc.expected_output) + ",\n";
    }
    out += "}\ndata = sys.stdin.read()\nsys.stdout.write(table.get(data, \"\"))\n";
    return out;
}

std::string correct_text(const Question& q) {
    switch (q.task_family) {
        case TaskFamily::free_math:
        case TaskFamily::short_answer:
            return "Step-by-step reasoning for " + q.id + ".\nThe final answer is \\boxed{" +
                   q.ground_truth + "}.";
        case TaskFamily::mcq:
            return "Comparing the options for " + q.id + ".\nThe final answer is \\boxed{" +
                   q.ground_truth + "}.";
        case TaskFamily::code:
            return lookup_table_program(q);
    }
    throw Error("unreachable task family");
}

std::string wrong_text(const Question& q) {
    switch (q.task_family) {
        case TaskFamily::free_math:
        case TaskFamily::short_answer:
            return "Attempted reasoning for " + q.id + ".\nThe final answer is \\boxed{" +
                   q.ground_truth + "1}.";
        case TaskFamily::mcq: {
            char next = static_cast<char>('A' + (q.ground_truth[0] - 'A' + 1) % 4);
            return "Comparing the options for " + q.id + ".\nThe final answer is \\boxed{" +
                   std::string(1, next) + "}.";
        }
        case TaskFamily::code:
            return "import sys\nsys.stdout.write(\"__wrong__\")\n";
    }
    throw Error("unreachable task family");
}

long long approx_prompt_tokens(const std::string& text) {
    return static_cast<long long>(text.size() / 4) + 1;
}

}  // namespace

SimBackend::SimBackend(const QuestionSet& questions, const EmbeddingStore& embeddings,
                       std::map<std::string, SimQuestionProfile> profiles, SimParams params)
    : questions_(&questions),
      embeddings_(&embeddings),
      profiles_(std::move(profiles)),
      params_(params) {
    for (const auto& [id, profile] : profiles_) {
        if (profile.base_success_prob < 0.0 || profile.base_success_prob > 1.0) {
            throw ConfigError("sim profile for \"" + id + "\" has p0 outside [0,1]");
        }
        if (profile.success_token_mean < 1) {
            throw ConfigError("sim profile for \"" + id + "\" has success token mean < 1");
        }
        if (profile.failure_token_mean < profile.success_token_mean) {
            throw ConfigError("sim profile for \"" + id +
                              "\" has failure token mean below success mean");
        }
    }
}

const SimQuestionProfile& SimBackend::profile_of(const std::string& question_id) const {
    auto it = profiles_.find(question_id);
    if (it == profiles_.end()) {
        throw ConfigError("no sim profile for question \"" + question_id + "\"");
    }
    return it->second;
}

GenerationResult SimBackend::generate(const PromptSpec& prompt, const DecodingParams& params,
                                      SeededRng& rng) {
    const Question& q = questions_->by_id(prompt.target_question_id);
    const SimQuestionProfile& profile = profile_of(q.id);

    std::vector<double> sims;
    sims.reserve(prompt.demonstrations.size());
    const EmbeddingVector* target_vec = embeddings_->find(q.id);
    for (const Demonstration& d : prompt.demonstrations) {
        const EmbeddingVector* source_vec = embeddings_->find(d.source_question_id);
        if (target_vec && source_vec) sims.push_back(cosine(*target_vec, *source_vec));
    }

    double temp_bonus = params_.eta * (params.temperature - params_.base_temperature);
    double p = sim_effective_success_prob(profile, sims, params_.alpha, params_.tau, temp_bonus);

    // Fixed draw order keeps replays byte-identical: success, output, thinking.
    bool success = rng.stream().bernoulli(p);
    auto [output_tokens, thinking_tokens] =
        sim_token_cost(profile, success, params.thinking_budget, rng.stream());

    GenerationResult result;
    result.text = success ? correct_text(q) : wrong_text(q);
    result.output_tokens = output_tokens;
    result.thinking_tokens = thinking_tokens;
    result.prompt_tokens = approx_prompt_tokens(prompt.rendered_text);
    result.backend_id = id();
    if (result.output_tokens > params.max_output_tokens) {
        result.output_tokens = params.max_output_tokens;
        result.truncated = true;
        result.text = result.text.substr(0, result.text.size() / 2);
    }
    return result;
}

std::map<std::string, SimQuestionProfile> sim_profiles_from_corpus(
    const QuestionSet& questions, const SimQuestionProfile& defaults) {
    auto parse_double = [](const Question& q, const std::string& key, double fallback) {
        auto it = q.metadata.find(key);
        if (it == q.metadata.end()) return fallback;
        try {
            size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("question \"" + q.id + "\" metadata " + key + " is not a number");
        }
    };
    auto parse_count = [&](const Question& q, const std::string& key, long long fallback) {
        double v = parse_double(q, key, static_cast<double>(fallback));
        if (v < 1 || v != std::floor(v)) {
            throw ConfigError("question \"" + q.id + "\" metadata " + key +
                              " must be a positive integer");
        }
        return static_cast<long long>(v);
    };

    std::map<std::string, SimQuestionProfile> profiles;
    for (const Question& q : questions.questions()) {
        SimQuestionProfile p = defaults;
        p.question_id = q.id;
        p.base_success_prob = parse_double(q, "sim_p0", defaults.base_success_prob);
        p.success_token_mean = parse_count(q, "sim_ls", defaults.success_token_mean);
        p.failure_token_mean = parse_count(q, "sim_lf", defaults.failure_token_mean);
        auto cluster = q.metadata.find("cluster");
        if (cluster != q.metadata.end()) p.cluster_id = cluster->second;
        profiles.emplace(q.id, std::move(p));
    }
    return profiles;
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
    split_url(config_.base_url);  // validate early
    if (!config_.extensions.is_null() && !config_.extensions.is_object()) {
        throw ConfigError("backend extensions must be a JSON object");
    }
    if (config_.cache_path.empty()) return;
    std::ifstream in(config_.cache_path);
    if (!in) return;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error&) {
            throw BackendError("response cache " + config_.cache_path.string() + ":" +
                               std::to_string(line_no) + " is corrupt");
        }
        GenerationResult r;
        r.text = obj.at("text").get<std::string>();
        r.prompt_tokens = obj.at("prompt_tokens").get<long long>();
        r.output_tokens = obj.at("output_tokens").get<long long>();
        r.thinking_tokens = obj.at("thinking_tokens").get<long long>();
        r.truncated = obj.value("truncated", false);
        r.backend_id = id();
        cache_[obj.at("key").get<std::string>()] = std::move(r);
    }
}

std::string HttpChatBackend::id() const {
    return "http:" + config_.model + "@" + config_.base_url;
}

GenerationResult HttpChatBackend::generate(const PromptSpec& prompt,
                                           const DecodingParams& params, SeededRng& rng) {
    std::string key =
        sha256_hex(config_.model + '\x1f' + prompt.text_digest + '\x1f' +
                   decoding_params_digest(params) + '\x1f' + std::to_string(rng.seed()));
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) {
            ++cache_hits_;
            return it->second;
        }
    }
    GenerationResult result = fetch(prompt, params, rng.seed());
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto [it, inserted] = cache_.emplace(key, result);
        if (inserted && !config_.cache_path.empty()) append_cache_line(key, result);
    }
    return result;
}

void HttpChatBackend::append_cache_line(const std::string& key, const GenerationResult& result) {
    std::ofstream out(config_.cache_path, std::ios::app);
    if (!out) {
        throw BackendError("cannot write response cache " + config_.cache_path.string());
    }
    json obj;
    obj["key"] = key;
    obj["text"] = result.text;
    obj["prompt_tokens"] = result.prompt_tokens;
    obj["output_tokens"] = result.output_tokens;
    obj["thinking_tokens"] = result.thinking_tokens;
    obj["truncated"] = result.truncated;
    out << obj.dump() << '\n';
}

GenerationResult HttpChatBackend::fetch(const PromptSpec& prompt, const DecodingParams& params,
                                        uint64_t seed) {
    UrlParts url = split_url(config_.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);

    json body;
    body["model"] = config_.model;
    body["messages"] = json::array({{{"role", "user"}, {"content", prompt.rendered_text}}});
    body["temperature"] = params.temperature;
    body["top_p"] = params.top_p;
    body["max_tokens"] = params.max_output_tokens;
    body["seed"] = seed;
    if (config_.extensions.is_object()) {
        for (const auto& [k, v] : config_.extensions.items()) body[k] = v;
    }
    std::string payload = body.dump();
    std::string route = url.path_prefix + config_.path;

    int last_status = 0;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.retry_backoff_ms << (attempt - 1)));
        }
        auto started = std::chrono::steady_clock::now();
        httplib::Result res = client.Post(route, payload, "application/json");
        if (!res) {
            last_status = 0;
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        last_status = res->status;
        if (res->status == 429 || res->status >= 500) {
            last_error = "provider status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw BackendError(
                "chat request failed with status " + std::to_string(res->status), res->status);
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error&) {
            throw BackendError("chat response is not JSON", res->status);
        }
        if (!reply.contains("choices") || !reply["choices"].is_array() ||
            reply["choices"].empty()) {
            throw BackendError("chat response carries no choices", res->status);
        }
        const json& choice = reply["choices"][0];
        if (!choice.contains("message") || !choice["message"].contains("content") ||
            !choice["message"]["content"].is_string()) {
            throw BackendError("chat response carries no message content", res->status);
        }
        auto count_of = [](const json& obj, const char* field) -> long long {
            auto it = obj.find(field);
            return (it != obj.end() && it->is_number()) ? it->get<long long>() : 0;
        };
        GenerationResult result;
        result.text = choice["message"]["content"].get<std::string>();
        result.truncated = choice.contains("finish_reason") &&
                           choice["finish_reason"].is_string() &&
                           choice["finish_reason"] == "length";
        if (reply.contains("usage") && reply["usage"].is_object()) {
            const json& usage = reply["usage"];
            result.prompt_tokens = count_of(usage, "prompt_tokens");
            result.output_tokens = count_of(usage, "completion_tokens");
            if (usage.contains("completion_tokens_details") &&
                usage["completion_tokens_details"].is_object()) {
                result.thinking_tokens =
                    count_of(usage["completion_tokens_details"], "reasoning_tokens");
            } else {
                result.thinking_tokens = count_of(usage, "thinking_tokens");
            }
        }
        result.backend_id = id();
        result.latency_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        return result;
    }
    throw BackendError("chat request failed after " + std::to_string(config_.max_retries + 1) +
                           " attempts (" + last_error + ")",
                       last_status);
}

}  // namespace ttc
