#pragma once

#include <string_view>

namespace dgppu::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Off = 3 };

void set_level(Level level);
Level level();

void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);

}  // namespace dgppu::log
