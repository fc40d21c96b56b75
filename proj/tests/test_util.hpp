#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "metersentry/calendar.hpp"
#include "metersentry/ingest.hpp"

namespace testutil {

/// Unique directory under the system temp root, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("metersentry_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// 2014-01-01T00:00:00Z
inline constexpr metersentry::UnixTime kT0 = 1388534400;

/// Hourly frame with consumption from `value(i)`; temperature 10, holiday 0,
/// calendar columns filled from the timestamp.
inline metersentry::ingest::FeatureFrame make_hourly_frame(
    Eigen::Index n, const std::function<double(Eigen::Index)>& value,
    metersentry::UnixTime start = kT0) {
  metersentry::ingest::FeatureFrame f;
  f.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const metersentry::UnixTime ts = start + i * metersentry::kSecondsPerHour;
    const metersentry::CivilDateTime c = metersentry::to_civil(ts);
    f.timestamps[static_cast<std::size_t>(i)] = ts;
    f.consumption[i] = value(i);
    f.temperature[i] = 10.0;
    f.holiday[i] = 0.0;
    f.weekday[i] = metersentry::weekday_monday0(ts);
    f.hour[i] = c.hour;
    f.month[i] = c.month;
    f.day[i] = c.day;
  }
  return f;
}

}  // namespace testutil
