#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace mosaic::log {

enum class Level { debug = 0, info = 1, warn = 2, quiet = 3 };

using Sink = std::function<void(Level, std::string_view)>;

/// Messages below the threshold are dropped. Default threshold is warn; the
/// MOSAIC_LOG environment variable (debug|info|warn|quiet) overrides it.
void set_level(Level level);
Level level();

/// Replaces the default stderr sink (tests use this to capture messages).
/// Returns the previous sink.
Sink set_sink(Sink sink);

void write(Level level, std::string_view message);
inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }

}  // namespace mosaic::log
