#pragma once

#include <stdexcept>
#include <string>

namespace dvcg {

// Bad input: malformed config, dimension mismatch, out-of-domain argument.
class ValidationError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

// A learning or simulation step produced a non-finite value.
class NumericError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// An estimator was queried before the bill holds enough history.
class ColdStartError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Exhaustive search would exceed the configured work budget.
class EnumerationLimitError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace dvcg
