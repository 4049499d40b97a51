#pragma once

#include <stdexcept>
#include <string>

namespace ttc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CorpusError : public Error {
public:
    using Error::Error;
};

class EmbeddingError : public Error {
public:
    using Error::Error;
};

// Transport or provider failure from a remote backend. Carries the last
// HTTP status seen (0 when the failure never reached the server).
class BackendError : public Error {
public:
    explicit BackendError(const std::string& what, int provider_status = 0)
        : Error(what), provider_status_(provider_status) {}

    int provider_status() const { return provider_status_; }

private:
    int provider_status_ = 0;
};

class GradingError : public Error {
public:
    using Error::Error;
};

// Log file corruption. byte_offset points at the start of the bad record.
class LogError : public Error {
public:
    explicit LogError(const std::string& what, long long byte_offset = -1)
        : Error(what), byte_offset_(byte_offset) {}

    long long byte_offset() const { return byte_offset_; }

private:
    long long byte_offset_ = -1;
};

}  // namespace ttc
