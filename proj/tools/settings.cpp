#include "settings.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace kamqm_cli {
namespace {

struct Default {
  const char* key;
  const char* value;
};

// Empty value = unset. Documented in docs/config.md.
constexpr Default kDefaults[] = {
    {"potential.source", "cosine"},
    {"potential.strength", "1"},
    {"run.hbar", "0.1"},
    {"run.energy", "2"},
    {"run.delta", "0.1"},
    {"run.k", "0.3"},
    {"run.k_grid", "32"},
    {"run.seed", ""},
    {"run.workers", "0"},
    {"run.output", ""},
    {"bands.count", "10"},
    {"bands.cutoff", "0"},
    {"bands.e_max", ""},
    {"kam.c", "0.5"},
    {"kam.gamma", "0"},
    {"kam.tau", "0"},
    {"kam.k_max", "0"},
    {"kam.newton_cutoff", "16"},
    {"kam.tol", "1e-12"},
    {"kam.max_iterations", "200"},
    {"kam.grid", "32"},
    {"kam.tori", "6"},
    {"quasimode.order", "3"},
    {"quasimode.alpha", "0"},
    {"classical.samples", "20000"},
    {"classical.T", "100"},
    {"classical.dt", "0.002"},
    {"classical.rel_tol", "0.01"},
    {"sweep.energies", "4, 16, 64"},
    {"sweep.hbar", "0.1, 0.05 | 0.2, 0.1 | 0.4, 0.2"},
    {"sweep.samples", "5000"},
    {"sweep.scale_samples", "true"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Settings::Settings() {
  for (const Default& d : kDefaults) {
    values_[d.key] = d.value;
    origin_[d.key] = "default";
  }
}

void Settings::load_file(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config " + path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config " + path + ": key '" + section + "' outside a [section]");
    for (const auto& [key, value] : body) set(section + "." + key, value.data(), "file");
  }
}

void Settings::set(const std::string& key, const std::string& value, const std::string& origin) {
  if (!known(key)) throw ConfigError("unknown setting '" + key + "'");
  values_[key] = trim(value);
  origin_[key] = origin;
}

bool Settings::present(const std::string& key) const { return !text(key).empty(); }

std::string Settings::text(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown setting '" + key + "'");
  return it->second;
}

double Settings::number(const std::string& key) const {
  const std::string s = text(key);
  if (s.empty()) throw ConfigError(key + " is required");
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) {
    throw ConfigError(key + " = '" + s + "' is not a finite number");
  }
  return x;
}

int Settings::integer(const std::string& key) const {
  const std::string s = text(key);
  if (s.empty()) throw ConfigError(key + " is required");
  char* end = nullptr;
  errno = 0;
  const long x = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || x < -2147483647L || x > 2147483647L) {
    throw ConfigError(key + " = '" + s + "' is not an integer");
  }
  return static_cast<int>(x);
}

std::uint64_t Settings::unsigned64(const std::string& key) const {
  const std::string s = text(key);
  if (s.empty()) throw ConfigError(key + " is required");
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || s[0] == '-') {
    throw ConfigError(key + " = '" + s + "' is not a nonnegative integer");
  }
  return x;
}

bool Settings::flag(const std::string& key) const {
  const std::string s = text(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + " = '" + s + "' is not a boolean");
}

std::vector<double> parse_numbers(const std::string& key, const std::string& text) {
  std::string s = text;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0' || !std::isfinite(x)) {
      throw ConfigError(key + ": '" + tok + "' is not a finite number");
    }
    out.push_back(x);
  }
  return out;
}

std::vector<double> Settings::numbers(const std::string& key) const { return parse_numbers(key, text(key)); }

std::vector<std::vector<double>> Settings::groups(const std::string& key) const {
  std::vector<std::vector<double>> out;
  std::istringstream in(text(key));
  std::string part;
  while (std::getline(in, part, '|')) out.push_back(parse_numbers(key, part));
  return out;
}

nlohmann::ordered_json Settings::echo() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [key, value] : values_) j[key] = {{"value", value}, {"origin", origin_.at(key)}};
  return j;
}

}  // namespace kamqm_cli
