#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nat {

/// Node identifier after remapping. Valid ids are 1..num_nodes.
using NodeId = std::uint32_t;

/// Reserved id marking an unoccupied cache slot.
inline constexpr NodeId kEmpty = 0;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input files, bad configuration values, shape mismatches.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace nat
