#ifndef KNNCROSS_ERRORS_HPP
#define KNNCROSS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace knncross {

// Exit categories reported by the CLI. Library code throws typed errors; the
// CLI maps whatever escapes to one of these.
enum class ErrorCategory { usage, config, io, numeric, selftest };

int exit_code(ErrorCategory cat);
const char* category_name(ErrorCategory cat);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}
  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

// Bad call arguments: empty inputs, out-of-range parameters.
class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Operand dimensions disagree; message names both shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Token id outside the configured vocabulary.
class VocabError : public Error {
 public:
  explicit VocabError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Sequence does not fit the model window.
class WindowError : public Error {
 public:
  explicit WindowError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Object used before it reached the required state (e.g. unfrozen datastore).
class StateError : public Error {
 public:
  explicit StateError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Arithmetic that would overflow the result type.
class RangeError : public Error {
 public:
  explicit RangeError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Measurement impossible (e.g. timer resolution too coarse).
class BenchmarkError : public Error {
 public:
  explicit BenchmarkError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Invalid configuration: bad values, unknown keys, violated invariants.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg)
      : Error(ErrorCategory::config, msg) {}
};

// Missing or unreadable/unwritable files.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg)
      : Error(ErrorCategory::io, msg) {}
};

// Present but malformed input data; message carries the line number.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg)
      : Error(ErrorCategory::io, msg) {}
};

// Bad command line.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg)
      : Error(ErrorCategory::usage, msg) {}
};

}  // namespace knncross

#endif
