#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace metersentry {

/// Seconds since the Unix epoch, UTC. The pipeline never localizes.
using UnixTime = std::int64_t;

inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::int64_t kSecondsPerDay = 86400;

struct CivilDateTime {
  int year = 1970;
  int month = 1;  // 1-12
  int day = 1;    // 1-31
  int hour = 0;
  int minute = 0;
  int second = 0;
};

/// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int year, int month, int day);

/// Inverse of days_from_civil.
void civil_from_days(std::int64_t days, int& year, int& month, int& day);

UnixTime to_unix(const CivilDateTime& c);
CivilDateTime to_civil(UnixTime t);

/// Monday = 0 ... Sunday = 6.
int weekday_monday0(UnixTime t);

/// Parses `YYYY-MM-DDTHH:MM:SSZ` (the 'T' may be a space, the 'Z' is
/// optional, values are always read as UTC). Throws ParseError.
UnixTime parse_iso8601_utc(std::string_view text);

/// Parses `YYYY-MM-DD` as midnight UTC. Throws ParseError.
UnixTime parse_iso_date_utc(std::string_view text);

/// Formats as `YYYY-MM-DDTHH:MM:SSZ`.
std::string format_iso8601_utc(UnixTime t);

// Calendar-period floors used by resampling. Each returns the UTC instant
// the enclosing period starts at (weeks start on Monday).
UnixTime floor_to_day(UnixTime t);
UnixTime floor_to_week(UnixTime t);
UnixTime floor_to_month(UnixTime t);
UnixTime floor_to_quarter(UnixTime t);
UnixTime floor_to_half_year(UnixTime t);

}  // namespace metersentry
