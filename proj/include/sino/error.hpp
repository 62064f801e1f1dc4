#pragma once

#include <stdexcept>
#include <string>

namespace sino {

// Exit codes used by the command line front end.
enum class ErrorKind {
  validation = 2,
  numerical = 3,
  io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

struct IncompatibleDomain : Error {
  explicit IncompatibleDomain(const std::string& what)
      : Error(ErrorKind::validation, "incompatible domain: " + what) {}
};

struct InsufficientLength : Error {
  explicit InsufficientLength(const std::string& what)
      : Error(ErrorKind::validation, "insufficient trajectory length: " + what) {}
};

/// Imaginary residue after an inverse transform exceeded tolerance; the
/// coefficients were not Hermitian, which means a bug upstream.
struct HermitianViolation : Error {
  explicit HermitianViolation(const std::string& what)
      : Error(ErrorKind::numerical, "Hermitian violation: " + what) {}
};

struct NonFinite : Error {
  NonFinite(const std::string& what, double time = 0.0, long step = -1)
      : Error(ErrorKind::numerical, "non-finite values: " + what), time(time), step(step) {}
  double time;
  long step;
};

struct DegenerateTruth : Error {
  explicit DegenerateTruth(const std::string& what)
      : Error(ErrorKind::numerical, "degenerate truth: " + what) {}
};

struct ZeroVariance : Error {
  explicit ZeroVariance(const std::string& what)
      : Error(ErrorKind::numerical, "zero variance: " + what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace sino
