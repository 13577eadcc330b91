#include "volcast/time.hpp"

#include <array>
#include <cstdio>

#include "volcast/errors.hpp"

namespace volcast {
namespace {

// Civil-date <-> day-count conversions (proleptic Gregorian), valid far
// beyond any market timestamp.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;
}

bool is_leap(std::int64_t y) {
    return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

unsigned days_in_month(std::int64_t y, unsigned m) {
    static constexpr std::array<unsigned, 12> lengths = {31, 28, 31, 30, 31, 30,
                                                         31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return lengths[m - 1];
}

} // namespace

std::int64_t parse_iso8601_utc(std::string_view text) {
    long long y = 0;
    unsigned mo = 0, da = 0, h = 0, mi = 0, s = 0;
    char sep = 0, suffix = 0;
    const std::string buf(text);
    const int n = std::sscanf(buf.c_str(), "%lld-%2u-%2u%c%2u:%2u:%2u%c", &y,
                              &mo, &da, &sep, &h, &mi, &s, &suffix);
    if (n != 8 || (sep != 'T' && sep != ' ') || suffix != 'Z')
        throw DataError("timestamp not ISO-8601 UTC (expected "
                        "YYYY-MM-DDTHH:MM:SSZ): '" + buf + "'");
    if (mo < 1 || mo > 12 || da < 1 || da > days_in_month(y, mo) || h > 23 ||
        mi > 59 || s > 60)
        throw DataError("timestamp field out of range: '" + buf + "'");
    return days_from_civil(y, mo, da) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_iso8601_utc(std::int64_t seconds) {
    std::int64_t days = seconds / 86400;
    std::int64_t rem = seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    std::int64_t y;
    unsigned mo, da;
    civil_from_days(days, y, mo, da);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                  static_cast<long long>(y), mo, da,
                  static_cast<long long>(rem / 3600),
                  static_cast<long long>((rem % 3600) / 60),
                  static_cast<long long>(rem % 60));
    return buf;
}

} // namespace volcast
