#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace eadnet {

// File / stream format problems (bad magic, truncated payload, ...).
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail_invalid(const Args&... args) {
  throw std::invalid_argument(detail::cat(args...));
}

template <typename... Args>
[[noreturn]] void fail_io(const Args&... args) {
  throw io_error(detail::cat(args...));
}

}  // namespace eadnet
