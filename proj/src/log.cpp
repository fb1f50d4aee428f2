#include "colorloss/log.hpp"

#include <iostream>
#include <mutex>

namespace colorloss::log {
namespace {

std::mutex g_mutex;
Level g_min_level = Level::kInfo;

void stderr_sink(Level level, std::string_view message) {
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::cerr << '[' << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

Sink& sink_slot() {
  static Sink sink = stderr_sink;
  return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  Sink previous = std::move(sink_slot());
  sink_slot() = sink ? std::move(sink) : Sink(stderr_sink);
  return previous;
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min_level = level;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (level < g_min_level) return;
  sink_slot()(level, message);
}

}  // namespace colorloss::log
