// SPDX-License-Identifier: Apache-2.0

#include "spn/log.hpp"

#include <iostream>
#include <mutex>

namespace spn {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& sink() {
  static LogSink s = [](LogLevel level, const std::string& message) {
    std::cerr << (level == LogLevel::kWarning ? "warning: " : "") << message << '\n';
  };
  return s;
}

void emit(LogLevel level, const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(level, message);
}

}  // namespace

LogSink set_log_sink(LogSink replacement) {
  std::lock_guard lock(sink_mutex());
  LogSink old = std::move(sink());
  sink() = std::move(replacement);
  return old;
}

void log_info(const std::string& message) { emit(LogLevel::kInfo, message); }
void log_warning(const std::string& message) { emit(LogLevel::kWarning, message); }

}  // namespace spn
