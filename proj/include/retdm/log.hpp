#pragma once

// stderr logging gated by RETDM_LOG=error|info|debug (default info).

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace retdm::log {

enum class Level { error = 0, info = 1, debug = 2 };

inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("RETDM_LOG");
    const std::string_view v = env ? env : "info";
    if (v == "error") return Level::error;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return level;
}

inline void write(Level level, std::string_view tag, const std::string& msg) {
  if (static_cast<int>(level) <= static_cast<int>(threshold())) std::cerr << "retdm " << tag << ": " << msg << '\n';
}

inline void error(const std::string& msg) { write(Level::error, "error", msg); }
inline void info(const std::string& msg) { write(Level::info, "info", msg); }
inline void debug(const std::string& msg) { write(Level::debug, "debug", msg); }

}  // namespace retdm::log
