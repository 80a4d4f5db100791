#include "band_cache.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kamqm_cli {

std::string exact(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_band_header(std::ostream& out, int d) {
  out << "hbar";
  for (int j = 0; j < d; ++j) out << ",k" << j + 1;
  out << ",n,E";
  for (int j = 0; j < d; ++j) out << ",v" << j + 1;
  out << ",converged\n";
}

void write_band_row(std::ostream& out, const BandRow& r) {
  out << exact(r.hbar);
  for (double x : r.k) out << ',' << exact(x);
  out << ',' << r.n << ',' << exact(r.energy);
  for (double x : r.velocity) out << ',' << exact(x);
  out << ',' << r.converged << '\n';
}

std::string BandCache::key(std::uint64_t potential_hash, double hbar, const std::string& cutoff, int k_grid) {
  char h[20];
  std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(potential_hash));
  return std::string("potential=") + h + " hbar=" + exact(hbar) + " cutoff=" + cutoff +
         " k_grid=" + std::to_string(k_grid);
}

std::filesystem::path BandCache::file_for(const std::string& key) const {
  std::uint64_t x = 1469598103934665603ULL;
  for (unsigned char c : key) {
    x ^= c;
    x *= 1099511628211ULL;
  }
  char name[40];
  std::snprintf(name, sizeof name, "bands_%016llx.csv", static_cast<unsigned long long>(x));
  return dir_ / name;
}

std::optional<std::vector<BandRow>> BandCache::load(const std::string& key, int d) const {
  std::ifstream in(file_for(key));
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line) || line != "# " + key) return std::nullopt;
  std::getline(in, line);  // column header
  std::vector<BandRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream ss(line);
    BandRow r;
    r.k.resize(static_cast<std::size_t>(d));
    r.velocity.resize(static_cast<std::size_t>(d));
    ss >> r.hbar;
    for (double& x : r.k) ss >> x;
    ss >> r.n >> r.energy;
    for (double& x : r.velocity) ss >> x;
    ss >> r.converged;
    if (!ss) return std::nullopt;  // truncated or foreign file
    rows.push_back(std::move(r));
  }
  return rows;
}

void BandCache::store(const std::string& key, int d, const std::vector<BandRow>& rows) const {
  std::filesystem::create_directories(dir_);
  // Write then rename so an interrupted run never leaves a half file.
  const auto path = file_for(key);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << "# " << key << '\n';
    write_band_header(out, d);
    for (const BandRow& r : rows) write_band_row(out, r);
    if (!out) return;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace kamqm_cli
