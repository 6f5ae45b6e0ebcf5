#include "basnet/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <stdexcept>

namespace basnet::log {

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static auto instance = [] {
    auto l = spdlog::stderr_color_mt("basnet");
    l->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    return l;
  }();
  return instance;
}

}  // namespace

void set_level(Level level) {
  switch (level) {
    case Level::kDebug:
      logger()->set_level(spdlog::level::debug);
      break;
    case Level::kInfo:
      logger()->set_level(spdlog::level::info);
      break;
    case Level::kWarn:
      logger()->set_level(spdlog::level::warn);
      break;
    case Level::kError:
      logger()->set_level(spdlog::level::err);
      break;
    case Level::kOff:
      logger()->set_level(spdlog::level::off);
      break;
  }
}

Level parse_level(const std::string& text) {
  if (text == "debug") return Level::kDebug;
  if (text == "info") return Level::kInfo;
  if (text == "warn") return Level::kWarn;
  if (text == "error") return Level::kError;
  if (text == "off") return Level::kOff;
  throw std::invalid_argument("unknown log level '" + text + "'");
}

void debug(const std::string& message) { logger()->debug(message); }
void info(const std::string& message) { logger()->info(message); }
void warn(const std::string& message) { logger()->warn(message); }
void error(const std::string& message) { logger()->error(message); }

}  // namespace basnet::log
