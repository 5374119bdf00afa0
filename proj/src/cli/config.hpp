#pragma once

// Sectioned key/value experiment configuration. Every value a command reads
// is recorded, defaults included, so the echo reproduces the run exactly.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "invnet/signal_grid.hpp"

namespace invnet::cli {

class Config {
 public:
  Config() = default;
  /// Throws ConfigError on malformed lines or duplicate keys.
  static Config parse(std::string_view text);

  void set(const std::string& section, const std::string& key, const std::string& value);

  std::string text(const std::string& section, const std::string& key, const std::string& fallback);
  double real(const std::string& section, const std::string& key, double fallback);
  /// "auto" (or absence with an empty fallback) yields nullopt.
  std::optional<double> real_or_auto(const std::string& section, const std::string& key,
                                     std::optional<double> fallback);
  std::uint64_t u64(const std::string& section, const std::string& key, std::uint64_t fallback);
  std::size_t count(const std::string& section, const std::string& key, std::size_t fallback);
  bool flag(const std::string& section, const std::string& key, bool fallback);
  /// Extents joined by 'x', e.g. 64x64.
  Shape shape(const std::string& section, const std::string& key, const Shape& fallback);
  std::vector<double> reals(const std::string& section, const std::string& key, const std::vector<double>& fallback);
  /// Comma-separated; "none" is the empty list.
  std::vector<std::string> words(const std::string& section, const std::string& key,
                                 const std::vector<std::string>& fallback);

  bool has(const std::string& section, const std::string& key) const;
  /// Throws ConfigError naming every key that was supplied but never read.
  void reject_unused() const;
  /// Resolved configuration in the input grammar.
  std::string echo() const;

 private:
  using Key = std::pair<std::string, std::string>;
  const std::string* raw(const std::string& section, const std::string& key) const;
  void record(const std::string& section, const std::string& key, std::string canonical);

  std::map<Key, std::string> values_;
  std::vector<std::string> section_order_;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> resolved_;
};

std::string join_shape(const Shape& s);

}  // namespace invnet::cli
