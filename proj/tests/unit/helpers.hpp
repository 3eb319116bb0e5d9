#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rsv/data.hpp"

namespace testutil {

// Fresh scratch directory under RSV_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch(const std::string& name) {
  const char* root = std::getenv("RSV_TEST_TMP");
  std::filesystem::path p = root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "rsv_tests";
  p /= name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline rsv::UnitRecord exp_unit(int d, std::vector<double> r) {
  rsv::UnitRecord u;
  u.sample = rsv::SampleTag::Exp;
  u.treatment = d;
  u.rsv = std::move(r);
  return u;
}

inline rsv::UnitRecord obs_unit(int y, std::vector<double> r) {
  rsv::UnitRecord u;
  u.sample = rsv::SampleTag::Obs;
  u.outcome = y;
  u.rsv = std::move(r);
  return u;
}

}  // namespace testutil
