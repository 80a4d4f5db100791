#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kamqm_cli {

struct BandRow {
  double hbar = 0.0;
  std::vector<double> k;
  int n = 0;
  double energy = 0.0;
  std::vector<double> velocity;
  int converged = 0;
};

/// "hbar,k1[,k2],n,E,v1[,v2],converged" with round-trip precision.
void write_band_header(std::ostream& out, int dimension);
void write_band_row(std::ostream& out, const BandRow& r);

/// Band sweeps on disk, one file per key. The key text is stored in the
/// file and checked on load, so a file-name collision is a miss.
class BandCache {
 public:
  explicit BandCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string key(std::uint64_t potential_hash, double hbar, const std::string& cutoff, int k_grid);

  std::optional<std::vector<BandRow>> load(const std::string& key, int dimension) const;
  void store(const std::string& key, int dimension, const std::vector<BandRow>& rows) const;

 private:
  std::filesystem::path file_for(const std::string& key) const;
  std::filesystem::path dir_;
};

std::string exact(double x);

}  // namespace kamqm_cli
