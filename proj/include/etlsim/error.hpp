#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace etlsim {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when input data (curves, samples, allocations) violates a precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Carries every positioned problem found while loading a scenario.
class ScenarioError : public Error {
 public:
  explicit ScenarioError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out;
    for (const auto& p : problems) {
      if (!out.empty()) out += '\n';
      out += p;
    }
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace etlsim
