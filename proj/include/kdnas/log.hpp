#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace kdnas {

enum class LogLevel { debug, info, warning, error };

inline std::string_view log_level_name(LogLevel l) {
  switch (l) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
  }
  return "?";
}

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {

struct LogState {
  std::mutex mutex;
  LogLevel threshold = LogLevel::info;
  LogSink sink = [](LogLevel l, std::string_view msg) { std::cerr << "[" << log_level_name(l) << "] " << msg << '\n'; };
};

inline LogState& log_state() {
  static LogState s;
  return s;
}

}  // namespace detail

// Replaces the sink and returns the previous one.
inline LogSink set_log_sink(LogSink sink) {
  auto& s = detail::log_state();
  std::lock_guard lock(s.mutex);
  std::swap(s.sink, sink);
  return sink;
}

inline void set_log_level(LogLevel l) {
  auto& s = detail::log_state();
  std::lock_guard lock(s.mutex);
  s.threshold = l;
}

inline void log(LogLevel l, std::string_view msg) {
  auto& s = detail::log_state();
  std::lock_guard lock(s.mutex);
  if (l >= s.threshold && s.sink) s.sink(l, msg);
}

inline void log_info(std::string_view msg) { log(LogLevel::info, msg); }
inline void log_warning(std::string_view msg) { log(LogLevel::warning, msg); }

}  // namespace kdnas
