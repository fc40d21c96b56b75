#include "metersentry/calendar.hpp"

#include <charconv>
#include <cstdio>

#include "metersentry/errors.hpp"

namespace metersentry {

// Howard Hinnant's civil-days algorithms, valid for the full int range.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& year, int& month, int& day) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  month = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  year = static_cast<int>(y + (month <= 2));
}

UnixTime to_unix(const CivilDateTime& c) {
  return days_from_civil(c.year, c.month, c.day) * kSecondsPerDay +
         c.hour * 3600 + c.minute * 60 + c.second;
}

CivilDateTime to_civil(UnixTime t) {
  std::int64_t days = t / kSecondsPerDay;
  std::int64_t sod = t % kSecondsPerDay;
  if (sod < 0) {
    sod += kSecondsPerDay;
    days -= 1;
  }
  CivilDateTime c;
  civil_from_days(days, c.year, c.month, c.day);
  c.hour = static_cast<int>(sod / 3600);
  c.minute = static_cast<int>((sod % 3600) / 60);
  c.second = static_cast<int>(sod % 60);
  return c;
}

int weekday_monday0(UnixTime t) {
  std::int64_t days = t / kSecondsPerDay;
  if (t % kSecondsPerDay < 0) days -= 1;
  // 1970-01-01 was a Thursday (Monday-based index 3).
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

namespace {

int parse_int_field(std::string_view text, size_t pos, size_t len,
                    std::string_view context) {
  if (pos + len > text.size()) {
    throw ParseError("timestamp too short: '" + std::string(context) + "'");
  }
  int value = 0;
  const char* first = text.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, value);
  if (ec != std::errc() || ptr != first + len) {
    throw ParseError("bad numeric field in timestamp: '" + std::string(context) + "'");
  }
  return value;
}

void expect_char(std::string_view text, size_t pos, char a, char b,
                 std::string_view context) {
  if (pos >= text.size() || (text[pos] != a && text[pos] != b)) {
    throw ParseError("malformed timestamp: '" + std::string(context) + "'");
  }
}

bool valid_date(int y, int m, int d) {
  if (m < 1 || m > 12 || d < 1) return false;
  static constexpr int lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int max_day = lengths[m - 1];
  const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  if (m == 2 && leap) max_day = 29;
  return d <= max_day;
}

}  // namespace

UnixTime parse_iso_date_utc(std::string_view text) {
  CivilDateTime c;
  c.year = parse_int_field(text, 0, 4, text);
  expect_char(text, 4, '-', '-', text);
  c.month = parse_int_field(text, 5, 2, text);
  expect_char(text, 7, '-', '-', text);
  c.day = parse_int_field(text, 8, 2, text);
  if (!valid_date(c.year, c.month, c.day)) {
    throw ParseError("invalid calendar date: '" + std::string(text) + "'");
  }
  if (text.size() != 10) {
    throw ParseError("trailing characters in date: '" + std::string(text) + "'");
  }
  return to_unix(c);
}

UnixTime parse_iso8601_utc(std::string_view text) {
  CivilDateTime c;
  c.year = parse_int_field(text, 0, 4, text);
  expect_char(text, 4, '-', '-', text);
  c.month = parse_int_field(text, 5, 2, text);
  expect_char(text, 7, '-', '-', text);
  c.day = parse_int_field(text, 8, 2, text);
  expect_char(text, 10, 'T', ' ', text);
  c.hour = parse_int_field(text, 11, 2, text);
  expect_char(text, 13, ':', ':', text);
  c.minute = parse_int_field(text, 14, 2, text);
  size_t end = 16;
  if (text.size() > 16 && text[16] == ':') {
    c.second = parse_int_field(text, 17, 2, text);
    end = 19;
  }
  if (end < text.size()) {
    if (!(end + 1 == text.size() && text[end] == 'Z')) {
      throw ParseError("trailing characters in timestamp: '" + std::string(text) + "'");
    }
  }
  if (!valid_date(c.year, c.month, c.day) || c.hour > 23 || c.minute > 59 ||
      c.second > 60) {
    throw ParseError("invalid timestamp fields: '" + std::string(text) + "'");
  }
  return to_unix(c);
}

std::string format_iso8601_utc(UnixTime t) {
  const CivilDateTime c = to_civil(t);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year,
                c.month, c.day, c.hour, c.minute, c.second);
  return buf;
}

UnixTime floor_to_day(UnixTime t) {
  std::int64_t days = t / kSecondsPerDay;
  if (t % kSecondsPerDay < 0) days -= 1;
  return days * kSecondsPerDay;
}

UnixTime floor_to_week(UnixTime t) {
  const UnixTime day = floor_to_day(t);
  return day - static_cast<std::int64_t>(weekday_monday0(day)) * kSecondsPerDay;
}

UnixTime floor_to_month(UnixTime t) {
  CivilDateTime c = to_civil(t);
  c.day = 1;
  c.hour = c.minute = c.second = 0;
  return to_unix(c);
}

UnixTime floor_to_quarter(UnixTime t) {
  CivilDateTime c = to_civil(t);
  c.month = ((c.month - 1) / 3) * 3 + 1;
  c.day = 1;
  c.hour = c.minute = c.second = 0;
  return to_unix(c);
}

UnixTime floor_to_half_year(UnixTime t) {
  CivilDateTime c = to_civil(t);
  c.month = c.month <= 6 ? 1 : 7;
  c.day = 1;
  c.hour = c.minute = c.second = 0;
  return to_unix(c);
}

}  // namespace metersentry
