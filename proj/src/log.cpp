#include "ttrec/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace ttrec {

static LogLevel parse_level() {
  const char* env = std::getenv("TTREC_LOG");
  if (!env) return LogLevel::Warn;
  if (std::strcmp(env, "error") == 0) return LogLevel::Error;
  if (std::strcmp(env, "warn") == 0) return LogLevel::Warn;
  if (std::strcmp(env, "info") == 0) return LogLevel::Info;
  if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
  return LogLevel::Warn;
}

LogLevel log_level() {
  static const LogLevel lvl = parse_level();
  return lvl;
}

void log_msg(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[ttrec:%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

}  // namespace ttrec
