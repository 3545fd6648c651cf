#pragma once
// Error types shared by all modules.  Parse and evaluation errors live in
// exprs.hpp; integration failures are FlowError (flow.hpp).

#include <stdexcept>
#include <string>

namespace rotpend {

/// Invalid user input: bad config values, malformed system definitions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed to meet its contract.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string code, std::string stage, const std::string& detail)
      : std::runtime_error(stage + ": " + code + (detail.empty() ? "" : " (" + detail + ")")),
        code_(std::move(code)),
        stage_(std::move(stage)) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string code_;
  std::string stage_;
};

}  // namespace rotpend
