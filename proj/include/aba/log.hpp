#pragma once

// Minimal leveled logging to stderr. ABA_LOG=error|info|debug (default info).

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace aba::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

inline Level threshold() {
  static const Level level = [] {
    const char* v = std::getenv("ABA_LOG");
    if (!v) return Level::Info;
    const std::string s = v;
    if (s == "error") return Level::Error;
    if (s == "debug") return Level::Debug;
    return Level::Info;
  }();
  return level;
}

inline void write(Level lv, const std::string& msg) {
  if (static_cast<int>(lv) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  static const char* tags[] = {"error", "info", "debug"};
  std::lock_guard lk(mu);
  std::fprintf(stderr, "[%s] %s\n", tags[static_cast<int>(lv)], msg.c_str());
}

inline void error(const std::string& m) { write(Level::Error, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void debug(const std::string& m) { write(Level::Debug, m); }

}  // namespace aba::log
