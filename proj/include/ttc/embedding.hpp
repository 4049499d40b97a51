#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ttc/corpus.hpp"

namespace ttc {

struct EmbeddingVector {
    std::vector<double> values;

    size_t dim() const { return values.size(); }

    bool operator==(const EmbeddingVector&) const = default;
};

// ⟨a,b⟩ / (‖a‖‖b‖), clamped to [-1,1] against rounding. Dimension mismatch
// and zero vectors are errors.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
public:
    virtual ~Embedder() = default;

    // Stable identifier; part of cache keys.
    virtual std::string id() const = 0;

    virtual EmbeddingVector embed(const Question& question) = 0;
};

// Feature-hashes the lowercased alphanumeric tokens of the question text
// into a fixed-dim signed bucket vector, then L2-normalizes. Deterministic
// per (dim, text).
class HashingEmbedder : public Embedder {
public:
    explicit HashingEmbedder(size_t dim = 256);

    std::string id() const override;
    EmbeddingVector embed(const Question& question) override;

private:
    size_t dim_;
};

// Reads a JSON number array from metadata["embedding"]. Lets corpora carry
// hand-authored geometry, which simulation setups rely on.
class MetadataEmbedder : public Embedder {
public:
    std::string id() const override { return "metadata"; }
    EmbeddingVector embed(const Question& question) override;
};

struct RemoteEmbedderConfig {
    std::string base_url;  // scheme://host[:port][/prefix]
    std::string path = "/v1/embeddings";
    std::string model;
    std::string api_key;            // sent as a bearer token when non-empty
    int max_retries = 3;            // attempts beyond the first
    int retry_backoff_ms = 250;     // doubled per retry
    int timeout_s = 60;
    std::filesystem::path cache_path;  // empty disables persistence
};

// HTTP embedding client with a content-addressed cache. Cache entries are
// keyed by (endpoint model, text hash) so re-runs never re-bill.
class RemoteEmbedder : public Embedder {
public:
    explicit RemoteEmbedder(RemoteEmbedderConfig config);
    ~RemoteEmbedder() override;

    std::string id() const override;
    EmbeddingVector embed(const Question& question) override;

    size_t cache_hits() const { return cache_hits_; }
    size_t cache_misses() const { return cache_misses_; }

private:
    EmbeddingVector fetch(const std::string& text);
    void append_cache_line(const std::string& key, const EmbeddingVector& v);

    RemoteEmbedderConfig config_;
    std::map<std::string, EmbeddingVector> cache_;
    size_t cache_hits_ = 0;
    size_t cache_misses_ = 0;
};

struct Neighbor {
    std::string id;
    double similarity = 0.0;

    bool operator==(const Neighbor&) const = default;
};

// Fixed top-P similarity lists, one per question, computed once before the
// adaptive stage. Lists never contain the query itself and are sorted by
// similarity descending, ties by ascending id.
class NeighborIndex {
public:
    NeighborIndex() = default;
    static NeighborIndex from_lists(std::map<std::string, std::vector<Neighbor>> lists);

    const std::vector<Neighbor>& neighbors_of(const std::string& question_id) const;
    bool contains(const std::string& question_id) const;
    size_t size() const { return lists_.size(); }

    const std::map<std::string, std::vector<Neighbor>>& lists() const { return lists_; }

private:
    std::map<std::string, std::vector<Neighbor>> lists_;
};

NeighborIndex build_neighbor_index(const QuestionSet& questions, Embedder& embedder,
                                   size_t top_p);

// Embeddings for a whole question set, computed once and looked up by id.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    static EmbeddingStore build(const QuestionSet& questions, Embedder& embedder);

    const EmbeddingVector& of(const std::string& question_id) const;  // throws EmbeddingError
    const EmbeddingVector* find(const std::string& question_id) const;
    size_t size() const { return vectors_.size(); }

private:
    std::map<std::string, EmbeddingVector> vectors_;
};

}  // namespace ttc
