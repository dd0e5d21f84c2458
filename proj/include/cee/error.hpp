#pragma once

#include <stdexcept>
#include <string>

namespace cee {

// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
    config,     // bad configuration or formula text
    data,       // schema / value / consistency / structure problems in the input panel
    numerical,  // singular systems, non-convergence, overflow
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string category, const std::string& message)
        : std::runtime_error(message), kind_(kind), category_(std::move(category)) {}

    ErrorKind kind() const noexcept { return kind_; }
    // Fine-grained label such as "schema", "consistency", "singularity".
    const std::string& category() const noexcept { return category_; }

private:
    ErrorKind kind_;
    std::string category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorKind::config, "config", message) {}
};

class DataError : public Error {
public:
    DataError(std::string category, const std::string& message)
        : Error(ErrorKind::data, std::move(category), message) {}
};

class NumericalError : public Error {
public:
    NumericalError(std::string category, const std::string& message)
        : Error(ErrorKind::numerical, std::move(category), message) {}
};

}  // namespace cee
