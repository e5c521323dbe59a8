#include "dgppu/log.hpp"

#include <atomic>
#include <iostream>

namespace dgppu::log {

namespace {
std::atomic<Level> g_level{Level::Warn};

void emit(Level at, const char* tag, std::string_view message) {
  if (at < g_level.load(std::memory_order_relaxed)) return;
  std::cerr << "[dgppu " << tag << "] " << message << '\n';
}
}  // namespace

void set_level(Level level) { g_level.store(level, std::memory_order_relaxed); }
Level level() { return g_level.load(std::memory_order_relaxed); }

void debug(std::string_view message) { emit(Level::Debug, "debug", message); }
void info(std::string_view message) { emit(Level::Info, "info", message); }
void warn(std::string_view message) { emit(Level::Warn, "warn", message); }

}  // namespace dgppu::log
