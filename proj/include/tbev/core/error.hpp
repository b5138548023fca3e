#pragma once

#include <stdexcept>
#include <string>

namespace tbev {

// Error taxonomy used across the library. The CLI maps each category to a
// distinct exit code; library code throws, it never exits.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run-time arguments: shape mismatches, empty inputs, bad indices.
struct ArgumentError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration (file keys, dimension contracts).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent persisted data (stores, checkpoints, scenarios).
struct DataError : Error {
    using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
    using Error::Error;
};

// Non-finite losses, infeasible generation, and similar run failures.
struct TrainingError : Error {
    using Error::Error;
};

struct GenerationError : Error {
    using Error::Error;
};

// A pipeline command was invoked before the artifacts it consumes exist.
struct MissingDependencyError : Error {
    using Error::Error;
};

}  // namespace tbev
