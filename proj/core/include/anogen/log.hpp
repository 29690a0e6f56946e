#pragma once

#include <string_view>

namespace anogen::log {

enum class Level { debug, info, warn, error };

void set_level(Level level);
Level level();

void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace anogen::log
