#pragma once

#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttc/corpus.hpp"

namespace ttc_test {

// Self-deleting temporary directory.
class TempDir {
public:
    TempDir() {
        std::string tmpl =
            (std::filesystem::temp_directory_path() / "ttc-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline ttc::Question make_math_question(std::string id, std::string text, std::string answer) {
    ttc::Question q;
    q.id = std::move(id);
    q.task_family = ttc::TaskFamily::free_math;
    q.text = std::move(text);
    q.ground_truth = std::move(answer);
    return q;
}

inline void set_embedding(ttc::Question& q, const std::vector<double>& values) {
    q.metadata["embedding"] = nlohmann::json(values).dump();
}

inline ttc::Question make_embedded_question(std::string id, const std::vector<double>& values) {
    ttc::Question q = make_math_question(std::move(id), "placeholder text", "0");
    set_embedding(q, values);
    return q;
}

}  // namespace ttc_test
