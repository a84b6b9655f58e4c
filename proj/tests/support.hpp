#pragma once

// Shared fixtures for the unit tests.

#include "ivf/data_model.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace ivf::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ivfjoint_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline CycleRecord cycle(std::string id, double age, double partner, int attempt, std::optional<int> oocytes,
                         bool mixed, std::optional<int> embryos, bool transfer, std::optional<int> det,
                         std::optional<int> lbe) {
  CycleRecord c;
  c.cycle_id = std::move(id);
  c.age = age;
  c.partner_age = partner;
  c.attempt = attempt;
  c.n_oocytes = oocytes;
  c.oocytes_mixed = mixed;
  c.n_embryos = embryos;
  c.transfer_done = transfer;
  c.det = det;
  c.lbe = lbe;
  return c;
}

}  // namespace ivf::test
