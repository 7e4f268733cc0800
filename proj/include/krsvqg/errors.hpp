#pragma once

#include <stdexcept>
#include <string>

namespace krsvqg {

// Unreadable/unwritable files, malformed binary containers.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// A training run was invoked without its prerequisites (missing
// checkpoint, dataset schema mismatch, stage ordering violation).
struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

// Autoregressive decoding could not produce output.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

// Prediction/reference files do not line up, or the corpus cannot be scored.
struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace krsvqg
