#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace metersentry::log {

enum class Level { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };

/// Verbosity from METERSENTRY_LOG (quiet|warn|info|debug). Default: warn.
inline Level level() {
  static const Level cached = [] {
    const char* env = std::getenv("METERSENTRY_LOG");
    if (env == nullptr) return Level::Warn;
    const std::string_view v(env);
    if (v == "quiet") return Level::Quiet;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return cached;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(level()); }

// Diagnostics go to stderr so stdout stays clean for data.
inline void warn(std::string_view msg) {
  if (enabled(Level::Warn)) std::cerr << "[warn] " << msg << "\n";
}

inline void info(std::string_view msg) {
  if (enabled(Level::Info)) std::cerr << "[info] " << msg << "\n";
}

inline void debug(std::string_view msg) {
  if (enabled(Level::Debug)) std::cerr << "[debug] " << msg << "\n";
}

}  // namespace metersentry::log
