#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "retdm/dataset.hpp"

namespace retdm::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 salt(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("retdm_" + tag + "_" + std::to_string(salt()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Small, easy synthetic problem for fast training tests.
inline SynthSpec small_spec(std::uint64_t seed, std::size_t n = 300) {
  SynthSpec s;
  s.n = n;
  s.m = 4;
  s.p = 8;
  s.topics = 2;
  s.labels_per_topic = 2;
  s.topic_rate = 0.4;
  s.flip_noise = 0.02;
  s.feature_noise = 0.3;
  s.seed = seed;
  return s;
}

}  // namespace retdm::test
