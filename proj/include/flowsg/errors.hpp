#pragma once

#include <stdexcept>
#include <string>

namespace flowsg {

// Bad user input: flags, config files, missing paths. CLI maps this to exit 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Unusable data: empty corpora, malformed records.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flowsg
