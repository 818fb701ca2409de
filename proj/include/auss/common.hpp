#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace auss {

using StudentId = std::string;
using ResourceId = std::string;
using ItemId = std::string;

/// Discrete simulation time step.
using Tick = std::uint32_t;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate a documented precondition.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// Input data (files, records) is malformed.
class DataError : public Error {
public:
  using Error::Error;
};

} // namespace auss
