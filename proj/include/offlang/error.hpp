#pragma once

#include <stdexcept>
#include <string>

namespace offlang {

// Bad experiment configs, invalid recipe compositions, unusable arguments.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or missing input data, label problems, corrupt model files.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses or weights during training.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace offlang
