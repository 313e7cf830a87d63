#pragma once

#include <string>

namespace nsum {

enum class LogMode { plain, json, quiet };

void set_log_mode(LogMode mode);
LogMode log_mode();

void log_info(const std::string& msg);
void log_warn(const std::string& msg);

}  // namespace nsum
