#include "elip/log.hpp"

#include <iostream>
#include <mutex>

namespace elip::log {
namespace {

const char* level_name(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
  }
  return "?";
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](Level level, std::string_view message) {
    if (level == Level::Debug) return;
    std::cerr << "[" << level_name(level) << "] " << message << '\n';
  };
  return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void write(Level level, std::string_view message) {
  Sink sink;
  {
    std::lock_guard lock(sink_mutex());
    sink = current_sink();
  }
  if (sink) sink(level, message);
}

WarningCounter::WarningCounter() {
  previous_ = set_sink([this](Level level, std::string_view message) {
    if (level == Level::Warn) {
      ++count_;
      last_ = std::string(message);
    }
  });
}

WarningCounter::~WarningCounter() { set_sink(std::move(previous_)); }

}  // namespace elip::log
