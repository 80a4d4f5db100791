#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace kamqm_cli {

// Bad config or flag value: exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat "section.key" -> text store layered as defaults < config file < flags.
class Settings {
 public:
  Settings();

  /// Reads key = value lines grouped in [sections]. Unknown keys and
  /// malformed lines are ConfigErrors.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value, const std::string& origin);

  bool known(const std::string& key) const { return values_.count(key) != 0; }
  bool present(const std::string& key) const;  // non-empty value

  std::string text(const std::string& key) const;
  /// "default", "file" or "flag".
  std::string origin(const std::string& key) const { return origin_.at(key); }
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t unsigned64(const std::string& key) const;
  bool flag(const std::string& key) const;
  /// Comma or whitespace separated numbers.
  std::vector<double> numbers(const std::string& key) const;
  /// Groups separated by '|', each a numbers() list.
  std::vector<std::vector<double>> groups(const std::string& key) const;

  /// Every key with its value and where it came from.
  nlohmann::ordered_json echo() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origin_;
};

std::vector<double> parse_numbers(const std::string& key, const std::string& text);

}  // namespace kamqm_cli
