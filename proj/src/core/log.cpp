#include "mosaic/core/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace mosaic::log {
namespace {

Level initial_level() {
  const char* env = std::getenv("MOSAIC_LOG");
  if (env == nullptr) return Level::warn;
  const std::string_view v(env);
  if (v == "debug") return Level::debug;
  if (v == "info") return Level::info;
  if (v == "quiet") return Level::quiet;
  return Level::warn;
}

std::atomic<Level>& threshold() {
  static std::atomic<Level> lvl{initial_level()};
  return lvl;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](Level lvl, std::string_view msg) {
    static constexpr const char* names[] = {"debug", "info", "warn", "quiet"};
    std::cerr << "[mosaic " << names[static_cast<int>(lvl)] << "] " << msg << '\n';
  };
  return sink;
}

}  // namespace

void set_level(Level lvl) { threshold().store(lvl); }
Level level() { return threshold().load(); }

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void write(Level lvl, std::string_view message) {
  if (lvl < threshold().load()) return;
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(lvl, message);
}

}  // namespace mosaic::log
