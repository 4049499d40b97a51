#include "ttc/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"

namespace ttc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
        }
    }
}

const json* maybe(const json& j, const std::string& key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

std::string label(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
}

long long get_int(const json& j, const std::string& where, const std::string& key,
                  long long fallback) {
    const json* v = maybe(j, key);
    if (!v) return fallback;
    if (!v->is_number_integer() && !v->is_number_unsigned()) {
        throw ConfigError(label(where, key) + " must be an integer");
    }
    return v->get<long long>();
}

double get_double(const json& j, const std::string& where, const std::string& key,
                  double fallback) {
    const json* v = maybe(j, key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(label(where, key) + " must be a number");
    return v->get<double>();
}

std::string get_string(const json& j, const std::string& where, const std::string& key,
                       const std::string& fallback) {
    const json* v = maybe(j, key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(label(where, key) + " must be a string");
    return v->get<std::string>();
}

void parse_http(const json& j, const std::string& where, HttpBackendConfig* http,
                std::string* api_key_env) {
    check_keys(j, where,
               {"base_url", "path", "model", "api_key_env", "max_retries", "retry_backoff_ms",
                "timeout_s", "cache_path", "extensions"});
    http->base_url = get_string(j, where, "base_url", http->base_url);
    http->path = get_string(j, where, "path", http->path);
    http->model = get_string(j, where, "model", http->model);
    http->max_retries = static_cast<int>(get_int(j, where, "max_retries", http->max_retries));
    http->retry_backoff_ms =
        static_cast<int>(get_int(j, where, "retry_backoff_ms", http->retry_backoff_ms));
    http->timeout_s = static_cast<int>(get_int(j, where, "timeout_s", http->timeout_s));
    http->cache_path = get_string(j, where, "cache_path", http->cache_path.string());
    if (const json* ext = maybe(j, "extensions")) {
        if (!ext->is_object()) throw ConfigError(label(where, "extensions") + " must be an object");
        http->extensions = *ext;
    }
    *api_key_env = get_string(j, where, "api_key_env", *api_key_env);
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

}  // namespace

std::string to_string(NeighborhoodDomain domain) {
    return domain == NeighborhoodDomain::full_set ? "full_set" : "active_set";
}

NeighborhoodDomain neighborhood_domain_from_string(const std::string& name) {
    if (name == "full_set") return NeighborhoodDomain::full_set;
    if (name == "active_set") return NeighborhoodDomain::active_set;
    throw ConfigError("unknown neighborhood_domain \"" + name +
                      "\" (expected full_set or active_set)");
}

std::string to_string(RunMode mode) {
    return mode == RunMode::standard ? "standard" : "self_consistency";
}

RunMode run_mode_from_string(const std::string& name) {
    if (name == "standard") return RunMode::standard;
    if (name == "self_consistency") return RunMode::self_consistency;
    throw ConfigError("unknown mode \"" + name + "\" (expected standard or self_consistency)");
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    check_keys(j, "config",
               {"corpus", "R", "R_warm", "K", "P", "gamma", "temp_step", "policies", "seeds",
                "neighborhood_domain", "mode", "decoding", "backend", "sim", "grader",
                "embedder", "difficulty", "sandbox", "templates_dir", "max_prompt_chars"});

    RunConfig config;
    config.mode = run_mode_from_string(get_string(j, "", "mode", "standard"));
    // The consensus ablation defaults to a longer horizon.
    if (config.mode == RunMode::self_consistency) config.R = 8;

    config.corpus_path = get_string(j, "", "corpus", "");
    config.R = static_cast<int>(get_int(j, "", "R", config.R));
    config.R_warm = static_cast<int>(get_int(j, "", "R_warm", config.R_warm));
    config.K = static_cast<int>(get_int(j, "", "K", config.K));
    config.P = static_cast<int>(get_int(j, "", "P", config.P));
    config.gamma = get_double(j, "", "gamma", config.gamma);
    config.temp_step = get_double(j, "", "temp_step", config.temp_step);
    config.neighborhood_domain = neighborhood_domain_from_string(
        get_string(j, "", "neighborhood_domain", "full_set"));
    config.templates_dir = get_string(j, "", "templates_dir", "");
    config.max_prompt_chars = static_cast<size_t>(
        get_int(j, "", "max_prompt_chars", static_cast<long long>(config.max_prompt_chars)));

    if (const json* policies = maybe(j, "policies")) {
        if (!policies->is_array()) throw ConfigError("policies must be an array of strings");
        for (const json& p : *policies) {
            if (!p.is_string()) throw ConfigError("policies must be an array of strings");
            config.policies.push_back(policy_kind_from_string(p.get<std::string>()));
        }
    }
    if (const json* seeds = maybe(j, "seeds")) {
        if (!seeds->is_array()) throw ConfigError("seeds must be an array of integers");
        for (const json& s : *seeds) {
            if (!s.is_number_integer() && !s.is_number_unsigned()) {
                throw ConfigError("seeds must be an array of integers");
            }
            if (s.is_number_integer() && s.get<long long>() < 0) {
                throw ConfigError("seeds must be non-negative");
            }
            config.seeds.push_back(s.get<uint64_t>());
        }
    }

    if (const json* decoding = maybe(j, "decoding")) {
        check_keys(*decoding, "decoding",
                   {"temperature", "top_p", "top_k", "max_output_tokens", "thinking_budget"});
        DecodingParams& d = config.decoding;
        d.temperature = get_double(*decoding, "decoding", "temperature", d.temperature);
        d.top_p = get_double(*decoding, "decoding", "top_p", d.top_p);
        d.top_k = static_cast<int>(get_int(*decoding, "decoding", "top_k", d.top_k));
        d.max_output_tokens =
            get_int(*decoding, "decoding", "max_output_tokens", d.max_output_tokens);
        d.thinking_budget =
            get_int(*decoding, "decoding", "thinking_budget", d.thinking_budget);
    }

    if (const json* backend = maybe(j, "backend")) {
        std::string kind = get_string(*backend, "backend", "kind", "sim");
        if (kind == "sim") {
            check_keys(*backend, "backend", {"kind"});
            config.backend.kind = BackendKind::sim;
        } else if (kind == "http") {
            json rest = *backend;
            rest.erase("kind");
            config.backend.kind = BackendKind::http;
            parse_http(rest, "backend", &config.backend.http, &config.backend.api_key_env);
        } else {
            throw ConfigError("unknown backend.kind \"" + kind + "\" (expected sim or http)");
        }
    }

    if (const json* sim = maybe(j, "sim")) {
        check_keys(*sim, "sim",
                   {"alpha", "tau", "eta", "default_p0", "default_success_tokens",
                    "default_failure_tokens"});
        config.sim.alpha = get_double(*sim, "sim", "alpha", config.sim.alpha);
        config.sim.tau = get_double(*sim, "sim", "tau", config.sim.tau);
        config.sim.eta = get_double(*sim, "sim", "eta", config.sim.eta);
        config.sim.defaults.base_success_prob =
            get_double(*sim, "sim", "default_p0", config.sim.defaults.base_success_prob);
        config.sim.defaults.success_token_mean = get_int(
            *sim, "sim", "default_success_tokens", config.sim.defaults.success_token_mean);
        config.sim.defaults.failure_token_mean = get_int(
            *sim, "sim", "default_failure_tokens", config.sim.defaults.failure_token_mean);
    }

    if (const json* grader = maybe(j, "grader")) {
        check_keys(*grader, "grader", {"kind", "flip_prob", "consensus_threshold", "judge"});
        std::string kind = get_string(*grader, "grader", "kind", "ground_truth");
        if (kind == "ground_truth") {
            config.grader.kind = GraderKind::ground_truth;
        } else if (kind == "model") {
            config.grader.kind = GraderKind::model;
        } else {
            throw ConfigError("unknown grader.kind \"" + kind +
                              "\" (expected ground_truth or model)");
        }
        config.grader.flip_prob =
            get_double(*grader, "grader", "flip_prob", config.grader.flip_prob);
        config.grader.consensus_threshold = get_double(*grader, "grader", "consensus_threshold",
                                                       config.grader.consensus_threshold);
        if (const json* judge = maybe(*grader, "judge")) {
            parse_http(*judge, "grader.judge", &config.grader.judge,
                       &config.grader.judge_api_key_env);
        }
    }

    if (const json* embedder = maybe(j, "embedder")) {
        std::string kind = get_string(*embedder, "embedder", "kind", "hashing");
        if (kind == "hashing") {
            check_keys(*embedder, "embedder", {"kind", "dim"});
            config.embedder.kind = EmbedderKind::hashing;
            config.embedder.dim = static_cast<size_t>(
                get_int(*embedder, "embedder", "dim", static_cast<long long>(config.embedder.dim)));
        } else if (kind == "metadata") {
            check_keys(*embedder, "embedder", {"kind"});
            config.embedder.kind = EmbedderKind::metadata;
        } else if (kind == "remote") {
            config.embedder.kind = EmbedderKind::remote;
            json rest = *embedder;
            rest.erase("kind");
            HttpBackendConfig http;
            http.path = config.embedder.remote.path;
            http.timeout_s = config.embedder.remote.timeout_s;
            parse_http(rest, "embedder", &http, &config.embedder.api_key_env);
            config.embedder.remote.base_url = http.base_url;
            config.embedder.remote.path = http.path;
            config.embedder.remote.model = http.model;
            config.embedder.remote.max_retries = http.max_retries;
            config.embedder.remote.retry_backoff_ms = http.retry_backoff_ms;
            config.embedder.remote.timeout_s = http.timeout_s;
            config.embedder.remote.cache_path = http.cache_path;
        } else {
            throw ConfigError("unknown embedder.kind \"" + kind +
                              "\" (expected hashing, metadata, or remote)");
        }
    }

    if (const json* difficulty = maybe(j, "difficulty")) {
        check_keys(*difficulty, "difficulty", {"kind", "estimator"});
        std::string kind = get_string(*difficulty, "difficulty", "kind", "sim");
        if (kind == "sim") {
            config.difficulty.kind = DifficultyKind::sim;
        } else if (kind == "model") {
            config.difficulty.kind = DifficultyKind::model;
        } else {
            throw ConfigError("unknown difficulty.kind \"" + kind +
                              "\" (expected sim or model)");
        }
        if (const json* estimator = maybe(*difficulty, "estimator")) {
            parse_http(*estimator, "difficulty.estimator", &config.difficulty.estimator,
                       &config.difficulty.api_key_env);
        }
    }

    if (const json* sandbox = maybe(j, "sandbox")) {
        check_keys(*sandbox, "sandbox", {"python_path", "wall_time_s", "memory_bytes"});
        config.sandbox.python_path =
            get_string(*sandbox, "sandbox", "python_path", config.sandbox.python_path);
        config.sandbox.wall_time_s =
            get_double(*sandbox, "sandbox", "wall_time_s", config.sandbox.wall_time_s);
        config.sandbox.memory_bytes =
            get_int(*sandbox, "sandbox", "memory_bytes", config.sandbox.memory_bytes);
    }

    return config;
}

nlohmann::json RunConfig::to_json() const {
    ordered_json j;
    j["corpus"] = corpus_path;
    j["R"] = R;
    j["R_warm"] = R_warm;
    j["K"] = K;
    j["P"] = P;
    j["gamma"] = gamma;
    j["temp_step"] = temp_step;
    j["policies"] = json::array();
    for (PolicyKind kind : policies) j["policies"].push_back(to_string(kind));
    j["seeds"] = seeds;
    j["neighborhood_domain"] = to_string(neighborhood_domain);
    j["mode"] = to_string(mode);
    j["decoding"] = {{"temperature", decoding.temperature},
                     {"top_p", decoding.top_p},
                     {"top_k", decoding.top_k},
                     {"max_output_tokens", decoding.max_output_tokens},
                     {"thinking_budget", decoding.thinking_budget}};

    auto http_json = [](const HttpBackendConfig& http, const std::string& api_key_env) {
        ordered_json out;
        out["base_url"] = http.base_url;
        out["path"] = http.path;
        out["model"] = http.model;
        out["api_key_env"] = api_key_env;
        out["max_retries"] = http.max_retries;
        out["retry_backoff_ms"] = http.retry_backoff_ms;
        out["timeout_s"] = http.timeout_s;
        out["cache_path"] = http.cache_path.string();
        out["extensions"] = http.extensions.is_null() ? json::object() : http.extensions;
        return out;
    };

    if (backend.kind == BackendKind::sim) {
        j["backend"] = {{"kind", "sim"}};
    } else {
        j["backend"] = http_json(backend.http, backend.api_key_env);
        j["backend"]["kind"] = "http";
    }

    j["sim"] = {{"alpha", sim.alpha},
                {"tau", sim.tau},
                {"eta", sim.eta},
                {"default_p0", sim.defaults.base_success_prob},
                {"default_success_tokens", sim.defaults.success_token_mean},
                {"default_failure_tokens", sim.defaults.failure_token_mean}};

    j["grader"] = {{"kind", grader.kind == GraderKind::ground_truth ? "ground_truth" : "model"},
                   {"flip_prob", grader.flip_prob},
                   {"consensus_threshold", grader.consensus_threshold}};
    if (grader.kind == GraderKind::model) {
        j["grader"]["judge"] = http_json(grader.judge, grader.judge_api_key_env);
    }

    switch (embedder.kind) {
        case EmbedderKind::hashing:
            j["embedder"] = {{"kind", "hashing"}, {"dim", embedder.dim}};
            break;
        case EmbedderKind::metadata:
            j["embedder"] = {{"kind", "metadata"}};
            break;
        case EmbedderKind::remote: {
            ordered_json out;
            out["kind"] = "remote";
            out["base_url"] = embedder.remote.base_url;
            out["path"] = embedder.remote.path;
            out["model"] = embedder.remote.model;
            out["api_key_env"] = embedder.api_key_env;
            out["max_retries"] = embedder.remote.max_retries;
            out["retry_backoff_ms"] = embedder.remote.retry_backoff_ms;
            out["timeout_s"] = embedder.remote.timeout_s;
            out["cache_path"] = embedder.remote.cache_path.string();
            j["embedder"] = out;
            break;
        }
    }

    j["difficulty"] = {{"kind", difficulty.kind == DifficultyKind::sim ? "sim" : "model"}};
    if (difficulty.kind == DifficultyKind::model) {
        j["difficulty"]["estimator"] = http_json(difficulty.estimator, difficulty.api_key_env);
    }

    j["sandbox"] = {{"python_path", sandbox.python_path},
                    {"wall_time_s", sandbox.wall_time_s},
                    {"memory_bytes", sandbox.memory_bytes}};
    j["templates_dir"] = templates_dir;
    j["max_prompt_chars"] = max_prompt_chars;
    return j;
}

void RunConfig::validate() const {
    require(!corpus_path.empty(), "corpus must name a question file");
    require(R >= 1, "R must be >= 1");
    require(R_warm >= 1 && R_warm <= R,
            "R_warm (" + std::to_string(R_warm) + ") must lie in 1..R (" + std::to_string(R) +
                ")");
    require(K >= 1, "K must be >= 1");
    require(P >= 1, "P must be >= 1");
    require(std::isfinite(gamma) && gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    require(std::isfinite(temp_step) && temp_step >= 0.0, "temp_step must be >= 0");
    require(!policies.empty(), "policies must list at least one policy");
    for (size_t i = 0; i < policies.size(); ++i) {
        for (size_t k = i + 1; k < policies.size(); ++k) {
            require(policies[i] != policies[k],
                    "policies lists \"" + to_string(policies[i]) + "\" twice");
        }
    }
    require(!seeds.empty(), "seeds must list at least one seed");
    for (size_t i = 0; i < seeds.size(); ++i) {
        for (size_t k = i + 1; k < seeds.size(); ++k) {
            require(seeds[i] != seeds[k],
                    "seeds lists " + std::to_string(seeds[i]) + " twice");
        }
    }

    require(std::isfinite(decoding.temperature) && decoding.temperature >= 0.0,
            "decoding.temperature must be >= 0");
    require(std::isfinite(decoding.top_p) && decoding.top_p > 0.0 && decoding.top_p <= 1.0,
            "decoding.top_p must lie in (0, 1]");
    require(decoding.top_k >= 1, "decoding.top_k must be >= 1");
    require(decoding.max_output_tokens >= 1, "decoding.max_output_tokens must be >= 1");
    require(decoding.thinking_budget >= 0, "decoding.thinking_budget must be >= 0");

    if (backend.kind == BackendKind::http) {
        require(!backend.http.base_url.empty(), "backend.base_url is required for http");
        require(!backend.http.model.empty(), "backend.model is required for http");
        require(backend.http.max_retries >= 0, "backend.max_retries must be >= 0");
        require(backend.http.timeout_s >= 1, "backend.timeout_s must be >= 1");
    }

    require(std::isfinite(sim.alpha) && sim.alpha >= 0.0, "sim.alpha must be >= 0");
    require(std::isfinite(sim.tau) && sim.tau >= 0.0 && sim.tau <= 1.0,
            "sim.tau must lie in [0, 1]");
    require(std::isfinite(sim.eta), "sim.eta must be finite");
    require(sim.defaults.base_success_prob >= 0.0 && sim.defaults.base_success_prob <= 1.0,
            "sim.default_p0 must lie in [0, 1]");
    require(sim.defaults.success_token_mean >= 1, "sim.default_success_tokens must be >= 1");
    require(sim.defaults.failure_token_mean >= sim.defaults.success_token_mean,
            "sim.default_failure_tokens must be >= sim.default_success_tokens");

    require(grader.flip_prob >= 0.0 && grader.flip_prob < 1.0,
            "grader.flip_prob must lie in [0, 1)");
    require(grader.consensus_threshold > 0.5 && grader.consensus_threshold <= 1.0,
            "grader.consensus_threshold must lie in (0.5, 1]");
    if (grader.kind == GraderKind::model) {
        require(!grader.judge.base_url.empty(), "grader.judge.base_url is required");
        require(!grader.judge.model.empty(), "grader.judge.model is required");
    }

    if (embedder.kind == EmbedderKind::hashing) {
        require(embedder.dim >= 1, "embedder.dim must be >= 1");
    }
    if (embedder.kind == EmbedderKind::remote) {
        require(!embedder.remote.base_url.empty(), "embedder.base_url is required for remote");
        require(!embedder.remote.model.empty(), "embedder.model is required for remote");
    }

    bool uses_da = false;
    for (PolicyKind kind : policies) uses_da |= kind == PolicyKind::difficulty_aware;
    if (uses_da && difficulty.kind == DifficultyKind::model) {
        require(!difficulty.estimator.base_url.empty(),
                "difficulty.estimator.base_url is required");
        require(!difficulty.estimator.model.empty(), "difficulty.estimator.model is required");
    }
    if (uses_da && difficulty.kind == DifficultyKind::sim) {
        require(backend.kind == BackendKind::sim,
                "difficulty.kind sim requires backend.kind sim");
    }

    require(std::isfinite(sandbox.wall_time_s) && sandbox.wall_time_s > 0.0,
            "sandbox.wall_time_s must be > 0");
    require(sandbox.memory_bytes >= 1 << 20, "sandbox.memory_bytes must be >= 1 MiB");
    require(max_prompt_chars >= 1024, "max_prompt_chars must be >= 1024");
}

std::string RunConfig::base_digest() const {
    json canonical = to_json();  // plain json sorts keys
    canonical.erase("policies");
    canonical.erase("seeds");
    return sha256_hex(canonical.dump());
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::stringstream buffer;
    buffer << in.rdbuf();
    json parsed;
    try {
        parsed = json::parse(buffer.str());
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        RunConfig config = RunConfig::from_json(parsed);
        config.validate();
        return config;
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace ttc
