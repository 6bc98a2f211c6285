#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <string_view>
#include <utility>

namespace fedcond::log {

enum class Level { notice, warning };

using Sink = std::function<void(Level, std::string_view)>;

inline Sink& sink() {
  static Sink s = [](Level level, std::string_view msg) {
    std::clog << (level == Level::warning ? "[warning] " : "[notice] ") << msg << '\n';
  };
  return s;
}

/// Replaces the process-wide sink; returns the previous one.
inline Sink set_sink(Sink next) { return std::exchange(sink(), std::move(next)); }

inline void notice(std::string_view msg) { sink()(Level::notice, msg); }
inline void warning(std::string_view msg) { sink()(Level::warning, msg); }

}  // namespace fedcond::log
