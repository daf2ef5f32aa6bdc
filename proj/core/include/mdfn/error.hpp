#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdfn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/op shape violations. Messages name the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range indices, degenerate boxes, non-finite values, bad arguments.
struct ValueError : Error {
  using Error::Error;
};

// File and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// Bad run configuration (missing dataset, variant mismatch, ...).
struct ConfigError : Error {
  using Error::Error;
};

namespace detail {

inline void msg_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  msg_append(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string msg(const Args&... args) {
  std::ostringstream os;
  detail::msg_append(os, args...);
  return os.str();
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

}  // namespace mdfn
