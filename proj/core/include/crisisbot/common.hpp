#pragma once

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace crisisbot {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// UTC wall-clock instant with millisecond resolution.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

Timestamp now_utc();

/// Formats as RFC 3339 in UTC, e.g. `2020-03-23T08:15:00.250Z`. Milliseconds
/// are omitted when zero.
std::string format_rfc3339(Timestamp t);

/// Accepts `YYYY-MM-DDTHH:MM:SS[.fff][Z|+hh:mm|-hh:mm]`; a bare date
/// `YYYY-MM-DD` is read as midnight UTC.
std::optional<Timestamp> parse_rfc3339(std::string_view text);

/// Parses `YYYY-MM-DD`.
std::optional<std::chrono::sys_days> parse_date(std::string_view text);

std::string format_date(std::chrono::sys_days day);

}  // namespace crisisbot
