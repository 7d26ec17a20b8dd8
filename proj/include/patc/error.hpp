#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace patc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed case or scenario text. `line()` is 1-based, 0 when unknown.
class ParseError : public Error
{
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what)
      , line_(line)
  {
  }

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a model invariant.
class ValidationError : public Error
{
 public:
  using Error::Error;
};

class IslandingError : public Error
{
 public:
  using Error::Error;
};

class ConvergenceError : public Error
{
 public:
  using Error::Error;
};

class SingularMatrixError : public Error
{
 public:
  using Error::Error;
};

/// Argument outside the support of a distribution or curve.
class DomainError : public Error
{
 public:
  using Error::Error;
};

/// Least-squares design that cannot determine the requested coefficients.
class IllPosedFitError : public Error
{
 public:
  using Error::Error;
};

} // namespace patc
