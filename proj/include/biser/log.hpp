#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace biser {

namespace detail {
inline std::atomic<bool>& quiet_flag() {
  static std::atomic<bool> quiet{false};
  return quiet;
}
}  // namespace detail

inline void set_quiet(bool quiet) { detail::quiet_flag() = quiet; }

inline void log_info(const std::string& msg) {
  if (!detail::quiet_flag()) std::clog << "[biser] " << msg << '\n';
}

inline void log_warning(const std::string& msg) {
  if (!detail::quiet_flag()) std::clog << "[biser] warning: " << msg << '\n';
}

}  // namespace biser
