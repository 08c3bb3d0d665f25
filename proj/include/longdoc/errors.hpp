#pragma once

#include <stdexcept>
#include <string>

namespace longdoc {

// Bad user input (config files, CLI values, malformed corpora). The CLI maps
// this to exit code 2; everything else that escapes is a runtime failure (1).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace longdoc
