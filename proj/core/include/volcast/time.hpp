#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace volcast {

/// Parse an ISO-8601 UTC timestamp ("2021-01-04T07:00:00Z") to seconds since
/// the Unix epoch. Throws DataError on anything else; offsets other than Z
/// are rejected (the toolkit is UTC-only).
std::int64_t parse_iso8601_utc(std::string_view text);

/// Format seconds since the Unix epoch as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601_utc(std::int64_t seconds);

} // namespace volcast
