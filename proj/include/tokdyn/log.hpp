#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace tokdyn {

enum class LogLevel { debug = 0, info = 1, warning = 2, quiet = 3 };

namespace detail {
inline std::atomic<LogLevel>& log_level_ref() {
  static std::atomic<LogLevel> level{LogLevel::warning};
  return level;
}
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void set_log_level(LogLevel level) { detail::log_level_ref() = level; }
inline LogLevel log_level() { return detail::log_level_ref(); }

inline void log(LogLevel level, std::string_view msg) {
  if (level < log_level()) return;
  static constexpr const char* names[] = {"debug", "info", "warning", ""};
  std::lock_guard lock(detail::log_mutex());
  std::clog << "[tokdyn] " << names[static_cast<int>(level)] << ": " << msg << '\n';
}

inline void log_warning(std::string_view msg) { log(LogLevel::warning, msg); }
inline void log_info(std::string_view msg) { log(LogLevel::info, msg); }

}  // namespace tokdyn
