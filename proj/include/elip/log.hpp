#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace elip::log {

enum class Level { Debug, Info, Warn, Error };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes Info and above to stderr.
Sink set_sink(Sink sink);

void write(Level level, std::string_view message);

inline void debug(std::string_view m) { write(Level::Debug, m); }
inline void info(std::string_view m) { write(Level::Info, m); }
inline void warn(std::string_view m) { write(Level::Warn, m); }
inline void error(std::string_view m) { write(Level::Error, m); }

// Counts warnings while alive; restores the previous sink on destruction.
class WarningCounter {
 public:
  WarningCounter();
  ~WarningCounter();
  WarningCounter(const WarningCounter&) = delete;
  WarningCounter& operator=(const WarningCounter&) = delete;

  int count() const { return count_; }
  const std::string& last() const { return last_; }

 private:
  Sink previous_;
  int count_ = 0;
  std::string last_;
};

}  // namespace elip::log
