#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace feedlab {

enum class ErrorKind {
  domain,
  degenerate_input,
  insufficient_data,
  data_inconsistency,
  solver,
  parse,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain_error";
    case ErrorKind::degenerate_input: return "degenerate_input";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::data_inconsistency: return "data_inconsistency";
    case ErrorKind::solver: return "solver_error";
    case ErrorKind::parse: return "parse_error";
  }
  return "unknown";
}

/// Every failure raised by the library. Carries the originating module and
/// operation so the CLI can report a machine-readable record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, std::string operation,
        const std::string& message)
      : std::runtime_error(module + "::" + operation + ": " + message),
        kind_(kind),
        module_(std::move(module)),
        operation_(std::move(operation)),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  const std::string& operation() const noexcept { return operation_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string module_;
  std::string operation_;
  std::string detail_;
};

/// Raised by the water-filling solver when the iteration budget runs out.
class SolverError : public Error {
 public:
  SolverError(std::string operation, const std::string& message,
              double best_residual)
      : Error(ErrorKind::solver, "allocator", std::move(operation), message),
        best_residual_(best_residual) {}

  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, std::string_view module,
                              std::string_view op, const std::string& msg) {
  throw Error(kind, std::string(module), std::string(op), msg);
}

}  // namespace detail
}  // namespace feedlab
