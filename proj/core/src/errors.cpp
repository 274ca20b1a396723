#include "knncross/errors.hpp"

namespace knncross {

int exit_code(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::usage:
      return 1;
    case ErrorCategory::config:
      return 2;
    case ErrorCategory::io:
      return 3;
    case ErrorCategory::numeric:
      return 4;
    case ErrorCategory::selftest:
      return 5;
  }
  return 4;
}

const char* category_name(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::usage:
      return "usage";
    case ErrorCategory::config:
      return "config";
    case ErrorCategory::io:
      return "io";
    case ErrorCategory::numeric:
      return "numeric";
    case ErrorCategory::selftest:
      return "selftest";
  }
  return "numeric";
}

}  // namespace knncross
