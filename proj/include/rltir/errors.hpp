#pragma once

#include <stdexcept>
#include <string>

namespace rltir {

// Bad parameters: depth ordering, empty training data, ranges.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad instance data handed to a model (dimension mismatch and the like).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Dataset parsing failures. Carries the 1-based line number when known.
struct IngestError : std::runtime_error {
  IngestError(const std::string& what, long line = -1)
      : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line(line) {}
  long line;
};

// Operation called on an object in the wrong state (unresolved feedback,
// non-terminal node handed to an action, ...).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Q-network training diverged.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rltir
