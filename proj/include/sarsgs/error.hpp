#pragma once

#include <stdexcept>
#include <string>

namespace sarsgs {

// Base class for every error raised by the library. Callers that do not care
// about the category can catch this one type.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error
{
public:
  using Error::Error;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

class InputError : public Error
{
public:
  using Error::Error;
};

class ParameterError : public Error
{
public:
  using Error::Error;
};

class DegenerateSignalError : public Error
{
public:
  using Error::Error;
};

class MetricError : public Error
{
public:
  using Error::Error;
};

class FormatError : public Error
{
public:
  using Error::Error;
};

class ManifestError : public Error
{
public:
  using Error::Error;
};

class IoError : public Error
{
public:
  using Error::Error;
};

// Raised when a solver or sampler produces a non-finite iterate. The indices
// locate the failure; -1 means "not applicable".
class DivergenceError : public Error
{
public:
  DivergenceError(std::string const &what, int outer = -1, int inner = -1)
    : Error(what)
    , outer_(outer)
    , inner_(inner)
  {
  }

  int outer() const { return outer_; }
  int inner() const { return inner_; }

private:
  int outer_;
  int inner_;
};

} // namespace sarsgs
