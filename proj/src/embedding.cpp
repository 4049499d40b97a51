#include "ttc/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ttc/error.hpp"
#include "ttc/hash.hpp"
#include "ttc/http.hpp"

namespace ttc {

using nlohmann::json;

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw EmbeddingError("cosine dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                             std::to_string(b.dim()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw EmbeddingError("cosine of a zero vector is undefined");
    double denom = std::sqrt(na) * std::sqrt(nb);
    if (!std::isfinite(denom) || denom == 0.0) {
        throw EmbeddingError("cosine norms are not finite");
    }
    return std::clamp(dot / denom, -1.0, 1.0);
}

HashingEmbedder::HashingEmbedder(size_t dim) : dim_(dim) {
    if (dim_ == 0) throw EmbeddingError("hashing embedder needs dim >= 1");
}

std::string HashingEmbedder::id() const { return "hashing-" + std::to_string(dim_); }

EmbeddingVector HashingEmbedder::embed(const Question& question) {
    EmbeddingVector v;
    v.values.assign(dim_, 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        uint64_t h = sha256_prefix64(token);
        size_t idx = static_cast<size_t>(h % dim_);
        double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
        v.values[idx] += sign;
        token.clear();
    };
    for (char c : question.text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            token.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    if (norm == 0.0) {
        v.values[0] = 1.0;  // punctuation-only text still embeds somewhere fixed
        return v;
    }
    norm = std::sqrt(norm);
    for (double& x : v.values) x /= norm;
    return v;
}

EmbeddingVector MetadataEmbedder::embed(const Question& question) {
    auto it = question.metadata.find("embedding");
    if (it == question.metadata.end()) {
        throw EmbeddingError("question \"" + question.id + "\" has no embedding metadata");
    }
    json arr;
    try {
        arr = json::parse(it->second);
    } catch (const json::parse_error&) {
        throw EmbeddingError("question \"" + question.id + "\" embedding metadata is not JSON");
    }
    if (!arr.is_array() || arr.empty()) {
        throw EmbeddingError("question \"" + question.id +
                             "\" embedding metadata must be a non-empty number array");
    }
    EmbeddingVector v;
    v.values.reserve(arr.size());
    for (const auto& x : arr) {
        if (!x.is_number()) {
            throw EmbeddingError("question \"" + question.id +
                                 "\" embedding metadata must be a non-empty number array");
        }
        double d = x.get<double>();
        if (!std::isfinite(d)) {
            throw EmbeddingError("question \"" + question.id + "\" embedding has non-finite value");
        }
        v.values.push_back(d);
    }
    return v;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config) : config_(std::move(config)) {
    split_url(config_.base_url);  // validate early
    if (config_.cache_path.empty()) return;
    std::ifstream in(config_.cache_path);
    if (!in) return;  // cache appears on first write
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error&) {
            throw EmbeddingError("embedding cache " + config_.cache_path.string() + ":" +
                                 std::to_string(line_no) + " is corrupt");
        }
        EmbeddingVector v;
        for (const auto& x : obj.at("values")) v.values.push_back(x.get<double>());
        cache_[obj.at("key").get<std::string>()] = std::move(v);
    }
}

RemoteEmbedder::~RemoteEmbedder() = default;

std::string RemoteEmbedder::id() const {
    return "remote:" + config_.model + "@" + config_.base_url;
}

EmbeddingVector RemoteEmbedder::embed(const Question& question) {
    std::string key = sha256_hex(id() + '\x1f' + question.text);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
        ++cache_hits_;
        return it->second;
    }
    ++cache_misses_;
    EmbeddingVector v = fetch(question.text);
    cache_[key] = v;
    if (!config_.cache_path.empty()) append_cache_line(key, v);
    return v;
}

void RemoteEmbedder::append_cache_line(const std::string& key, const EmbeddingVector& v) {
    std::ofstream out(config_.cache_path, std::ios::app);
    if (!out) {
        throw EmbeddingError("cannot write embedding cache " + config_.cache_path.string());
    }
    json obj;
    obj["key"] = key;
    obj["values"] = v.values;
    out << obj.dump() << '\n';
}

EmbeddingVector RemoteEmbedder::fetch(const std::string& text) {
    UrlParts url = split_url(config_.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);

    json body;
    body["model"] = config_.model;
    body["input"] = json::array({text});
    std::string payload = body.dump();
    std::string route = url.path_prefix + config_.path;

    int last_status = 0;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.retry_backoff_ms << (attempt - 1)));
        }
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
            throw BackendError("embedding request failed with status " +
                                   std::to_string(res->status),
                               res->status);
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error&) {
            throw BackendError("embedding response is not JSON", res->status);
        }
        const json* vec = nullptr;
        if (reply.contains("embeddings") && reply["embeddings"].is_array() &&
            !reply["embeddings"].empty()) {
            vec = &reply["embeddings"][0];
        } else if (reply.contains("data") && reply["data"].is_array() &&
                   !reply["data"].empty() && reply["data"][0].contains("embedding")) {
            vec = &reply["data"][0]["embedding"];
        }
        if (!vec || !vec->is_array() || vec->empty()) {
            throw BackendError("embedding response carries no vector", res->status);
        }
        EmbeddingVector v;
        v.values.reserve(vec->size());
        for (const auto& x : *vec) {
            double d = x.get<double>();
            if (!std::isfinite(d)) throw BackendError("embedding vector has non-finite value");
            v.values.push_back(d);
        }
        return v;
    }
    throw BackendError("embedding request failed after " +
                           std::to_string(config_.max_retries + 1) + " attempts (" + last_error +
                           ")",
                       last_status);
}

NeighborIndex NeighborIndex::from_lists(std::map<std::string, std::vector<Neighbor>> lists) {
    NeighborIndex index;
    index.lists_ = std::move(lists);
    return index;
}

const std::vector<Neighbor>& NeighborIndex::neighbors_of(const std::string& question_id) const {
    auto it = lists_.find(question_id);
    if (it == lists_.end()) {
        throw EmbeddingError("no neighbor list for question \"" + question_id + "\"");
    }
    return it->second;
}

bool NeighborIndex::contains(const std::string& question_id) const {
    return lists_.count(question_id) > 0;
}

EmbeddingStore EmbeddingStore::build(const QuestionSet& questions, Embedder& embedder) {
    EmbeddingStore store;
    for (const Question& q : questions.questions()) {
        store.vectors_.emplace(q.id, embedder.embed(q));
    }
    return store;
}

const EmbeddingVector& EmbeddingStore::of(const std::string& question_id) const {
    const EmbeddingVector* v = find(question_id);
    if (!v) throw EmbeddingError("no embedding stored for question \"" + question_id + "\"");
    return *v;
}

const EmbeddingVector* EmbeddingStore::find(const std::string& question_id) const {
    auto it = vectors_.find(question_id);
    return it == vectors_.end() ? nullptr : &it->second;
}

NeighborIndex build_neighbor_index(const QuestionSet& questions, Embedder& embedder,
                                   size_t top_p) {
    if (top_p < 1) throw EmbeddingError("neighbor index needs top_p >= 1");
    if (questions.size() < 2) {
        throw EmbeddingError("neighbor index needs at least 2 questions");
    }
    const auto& qs = questions.questions();
    std::vector<EmbeddingVector> vectors;
    vectors.reserve(qs.size());
    for (const Question& q : qs) vectors.push_back(embedder.embed(q));

    std::map<std::string, std::vector<Neighbor>> lists;
    std::vector<Neighbor> row;
    for (size_t i = 0; i < qs.size(); ++i) {
        row.clear();
        row.reserve(qs.size() - 1);
        for (size_t j = 0; j < qs.size(); ++j) {
            if (j == i) continue;
            row.push_back({qs[j].id, cosine(vectors[i], vectors[j])});
        }
        size_t keep = std::min(top_p, row.size());
        std::partial_sort(row.begin(), row.begin() + static_cast<ptrdiff_t>(keep), row.end(),
                          [](const Neighbor& a, const Neighbor& b) {
                              if (a.similarity != b.similarity) return a.similarity > b.similarity;
                              return a.id < b.id;
                          });
        row.resize(keep);
        lists.emplace(qs[i].id, row);
    }
    return NeighborIndex::from_lists(std::move(lists));
}

}  // namespace ttc
