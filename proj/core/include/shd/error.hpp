#pragma once

#include <stdexcept>
#include <string>

namespace shd {

// Bad user input: malformed config, inconsistent shapes in a file, unknown keys.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure at runtime: divergence (NaN/Inf loss), violated oracle chain.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shd
