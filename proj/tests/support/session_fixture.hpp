#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "nesy/session.hpp"

namespace nesy::testing {

// A scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("nesy_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// The scenario session is built once per process; tests work on copies.
inline const std::filesystem::path& base_session() {
  static TempDir dir("base");
  static const bool built = [] {
    Session::init(dir.path / "session");
    return true;
  }();
  (void)built;
  static const std::filesystem::path path = dir.path / "session";
  return path;
}

inline std::filesystem::path copy_session(const TempDir& into, const std::string& name = "session") {
  const auto target = into.path / name;
  std::filesystem::copy(base_session(), target, std::filesystem::copy_options::recursive);
  return target;
}

}  // namespace nesy::testing
