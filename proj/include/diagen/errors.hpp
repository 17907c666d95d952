#pragma once

#include <stdexcept>
#include <string>

namespace diagen {

// Bad input data, unsatisfied precondition, unusable configuration.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// A remote backend could not be reached (after retries, where applicable).
class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

// The backend answered but reported that this generation failed. Batch
// drivers record these and move on; they never abort a batch.
class GenerationError : public std::runtime_error {
public:
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace diagen
