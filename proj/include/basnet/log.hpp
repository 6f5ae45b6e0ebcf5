#pragma once

// Logging facade. The sink lives in a translation unit that never sees the
// tensor library's headers, whose bundled fmt differs from the one spdlog was
// built against.

#include <string>

namespace basnet::log {

enum class Level { kDebug, kInfo, kWarn, kError, kOff };

void set_level(Level level);
Level parse_level(const std::string& text);

void debug(const std::string& message);
void info(const std::string& message);
void warn(const std::string& message);
void error(const std::string& message);

}  // namespace basnet::log
