#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dictmlm {

// Pipeline-fatal condition: bad file, bad id, shape mismatch. Message names
// the offending file/field/op.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller misuse of an API contract (precondition violation).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string strcat_all(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail_data(const Args&... args) {
  throw DataError(strcat_all(args...));
}

template <typename... Args>
[[noreturn]] void fail_usage(const Args&... args) {
  throw UsageError(strcat_all(args...));
}

// Non-fatal per-line/per-record problem collected while parsing.
struct Diagnostic {
  std::string source;  // file path or stream label
  std::size_t line = 0;
  std::string message;
};

}  // namespace dictmlm
