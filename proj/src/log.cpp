#include "nsum/log.hpp"

#include <cstdio>

namespace nsum {

namespace {
LogMode g_mode = LogMode::plain;

void emit(const char* level, const std::string& msg) {
  if (g_mode == LogMode::quiet) return;
  if (g_mode == LogMode::json) {
    std::string escaped;
    for (char c : msg) {
      if (c == '"' || c == '\\') escaped += '\\';
      if (c == '\n') {
        escaped += "\\n";
        continue;
      }
      escaped += c;
    }
    std::fprintf(stderr, "{\"level\":\"%s\",\"msg\":\"%s\"}\n", level, escaped.c_str());
  } else {
    std::fprintf(stderr, "[%s] %s\n", level, msg.c_str());
  }
}
}  // namespace

void set_log_mode(LogMode mode) { g_mode = mode; }
LogMode log_mode() { return g_mode; }

void log_info(const std::string& msg) { emit("info", msg); }
void log_warn(const std::string& msg) { emit("warn", msg); }

}  // namespace nsum
