// SPDX-License-Identifier: Apache-2.0

#ifndef SPN_LOG_HPP
#define SPN_LOG_HPP

#include <functional>
#include <string>

namespace spn {

enum class LogLevel { kInfo, kWarning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Replaces the process-wide sink (stderr by default). Returns the old one.
LogSink set_log_sink(LogSink sink);
void log_info(const std::string& message);
void log_warning(const std::string& message);

}  // namespace spn

#endif  // SPN_LOG_HPP
