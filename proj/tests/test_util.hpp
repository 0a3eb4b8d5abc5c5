#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sidkit/schema.hpp"

#ifndef SIDKIT_SOURCE_ROOT
#define SIDKIT_SOURCE_ROOT "."
#endif

namespace test_util {

inline std::string source_root() { return SIDKIT_SOURCE_ROOT; }

inline sidkit::AttributeSchema synthetic_schema() {
  return sidkit::AttributeSchema::load(source_root() + "/configs/schema_synthetic.json");
}

// Self-deleting scratch directory.
class TempDir {
 public:
  explicit TempDir(const std::string& hint) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (hint + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace test_util
