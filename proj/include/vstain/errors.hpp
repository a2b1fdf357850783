#pragma once

#include <stdexcept>
#include <string>

namespace vstain {

// Failure classes surfaced to the command line as a one-word category.
enum class ErrorCategory { config, io, input, degenerate, planning, inference, training, internal };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::input: return "input";
    case ErrorCategory::degenerate: return "degenerate";
    case ErrorCategory::planning: return "planning";
    case ErrorCategory::inference: return "inference";
    case ErrorCategory::training: return "training";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what) : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};
// Rejected input: wrong sizes, empty selections.
struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorCategory::input, what) {}
};
// A numerically degenerate request (zero-width scaling, empty stretch range).
struct DegenerateError : Error {
  explicit DegenerateError(const std::string& what) : Error(ErrorCategory::degenerate, what) {}
};
// Fold or split requests the dataset cannot satisfy.
struct PlanningError : Error {
  explicit PlanningError(const std::string& what) : Error(ErrorCategory::planning, what) {}
};
struct InferenceError : Error {
  explicit InferenceError(const std::string& what) : Error(ErrorCategory::inference, what) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error(ErrorCategory::training, what) {}
};

}  // namespace vstain
