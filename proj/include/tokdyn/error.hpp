#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tokdyn {

// Process exit codes used by the CLI map one-to-one onto these categories.
enum class ErrorCategory : int {
  parameter = 2,
  io = 3,
  divergence = 4,
  not_observable = 5,
  degenerate = 6,
  solver = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what)
      : Error(ErrorCategory::parameter, "parameter error: " + what) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(ErrorCategory::io, "I/O error [" + path + "]: " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error(ErrorCategory::divergence,
              "divergence at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class NotObservableError : public Error {
 public:
  explicit NotObservableError(const std::string& what)
      : Error(ErrorCategory::not_observable, "not observable: " + what) {}
};

class DegenerateStatisticError : public Error {
 public:
  explicit DegenerateStatisticError(const std::string& what)
      : Error(ErrorCategory::degenerate, "degenerate statistic: " + what) {}
};

class SolverError : public Error {
 public:
  explicit SolverError(const std::string& what)
      : Error(ErrorCategory::solver, "solver error: " + what) {}
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ParameterError(what);
}

}  // namespace tokdyn
