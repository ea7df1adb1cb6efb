#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace nplab {

// Base class for every failure the library raises on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration or CLI usage (process exit code 1).
struct ConfigError : Error {
  using Error::Error;
};

// Missing or corrupt input data (process exit code 2).
struct DataError : Error {
  using Error::Error;
};

// A numerical invariant did not hold at runtime (process exit code 3).
struct InvariantError : Error {
  using Error::Error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Parts>
std::string format_msg(const Parts&... parts) {
  std::ostringstream os;
  os.precision(17);
  detail::format_into(os, parts...);
  return os.str();
}

template <class Err = Error, class... Parts>
void check(bool cond, const Parts&... parts) {
  if (!cond) throw Err(format_msg(parts...));
}

}  // namespace nplab
