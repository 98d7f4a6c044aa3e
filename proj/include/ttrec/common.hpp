#pragma once

#include <concepts>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ttrec {

using index_t = std::int64_t;

/// Element types the kernels are instantiated for.
template <typename T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

namespace detail {
inline void concat_into(std::ostringstream&) {}
template <typename A, typename... Rest>
void concat_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  concat_into(os, rest...);
}
}  // namespace detail

/// Stream-based string building; gcc 11 has no std::format.
template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  detail::concat_into(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw std::runtime_error(concat(args...));
}

template <typename... Args>
[[noreturn]] void fail_arg(const Args&... args) {
  throw std::invalid_argument(concat(args...));
}

template <typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

template <typename... Args>
void require_arg(bool cond, const Args&... args) {
  if (!cond) fail_arg(args...);
}

}  // namespace ttrec
