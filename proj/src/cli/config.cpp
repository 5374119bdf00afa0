#include "config.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <sstream>

#include "invnet/csv.hpp"
#include "invnet/errors.hpp"

namespace invnet::cli {

namespace {

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

double parse_real(const std::string& v, const std::string& section, const std::string& key) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size())
    throw ConfigError(where(section, key) + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& section, const std::string& key) {
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size())
    throw ConfigError(where(section, key) + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, sep)) {
    auto b = cur.find_first_not_of(" \t");
    auto e = cur.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

}  // namespace

std::string join_shape(const Shape& s) {
  std::vector<std::string> parts;
  for (auto e : s) parts.push_back(std::to_string(e));
  return join(parts, "x");
}

Config Config::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  Config cfg;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.size() > 1) throw ConfigError("config: nested section in '" + item.fullname() + "'");
    std::string section = item.parents.empty() ? "run" : item.parents[0];
    if (!valid_name(section)) throw ConfigError("config: bad section name '" + section + "'");
    if (!valid_name(item.name)) throw ConfigError("config: bad key '" + item.name + "' in [" + section + "]");
    if (cfg.has(section, item.name)) throw ConfigError("config: duplicate key " + where(section, item.name));
    cfg.values_[{section, item.name}] = join(item.inputs, ",");
  }
  return cfg;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  values_[{section, key}] = value;
}

bool Config::has(const std::string& section, const std::string& key) const {
  return values_.count({section, key}) != 0;
}

const std::string* Config::raw(const std::string& section, const std::string& key) const {
  auto it = values_.find({section, key});
  return it == values_.end() ? nullptr : &it->second;
}

void Config::record(const std::string& section, const std::string& key, std::string canonical) {
  auto& entries = resolved_[section];
  if (entries.empty()) section_order_.push_back(section);
  for (auto& [k, v] : entries)
    if (k == key) {
      v = std::move(canonical);
      return;
    }
  entries.emplace_back(key, std::move(canonical));
}

std::string Config::text(const std::string& section, const std::string& key, const std::string& fallback) {
  const std::string* v = raw(section, key);
  std::string out = v ? *v : fallback;
  record(section, key, out);
  return out;
}

double Config::real(const std::string& section, const std::string& key, double fallback) {
  const std::string* v = raw(section, key);
  double out = v ? parse_real(*v, section, key) : fallback;
  record(section, key, format_double(out));
  return out;
}

std::optional<double> Config::real_or_auto(const std::string& section, const std::string& key,
                                           std::optional<double> fallback) {
  const std::string* v = raw(section, key);
  std::optional<double> out = fallback;
  if (v) out = *v == "auto" ? std::nullopt : std::optional<double>(parse_real(*v, section, key));
  record(section, key, out ? format_double(*out) : "auto");
  return out;
}

std::uint64_t Config::u64(const std::string& section, const std::string& key, std::uint64_t fallback) {
  const std::string* v = raw(section, key);
  std::uint64_t out = v ? parse_u64(*v, section, key) : fallback;
  record(section, key, std::to_string(out));
  return out;
}

std::size_t Config::count(const std::string& section, const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(u64(section, key, fallback));
}

bool Config::flag(const std::string& section, const std::string& key, bool fallback) {
  const std::string* v = raw(section, key);
  bool out = fallback;
  if (v) {
    if (*v == "true" || *v == "1") out = true;
    else if (*v == "false" || *v == "0") out = false;
    else throw ConfigError(where(section, key) + ": expected true or false, got '" + *v + "'");
  }
  record(section, key, out ? "true" : "false");
  return out;
}

Shape Config::shape(const std::string& section, const std::string& key, const Shape& fallback) {
  const std::string* v = raw(section, key);
  Shape out = fallback;
  if (v) {
    out.clear();
    for (const auto& part : split(*v, 'x')) {
      auto e = parse_u64(part, section, key);
      if (e == 0) throw ConfigError(where(section, key) + ": extents must be positive");
      out.push_back(static_cast<std::size_t>(e));
    }
  }
  record(section, key, join_shape(out));
  return out;
}

std::vector<double> Config::reals(const std::string& section, const std::string& key,
                                  const std::vector<double>& fallback) {
  const std::string* v = raw(section, key);
  std::vector<double> out = fallback;
  if (v) {
    out.clear();
    for (const auto& part : split(*v, ',')) out.push_back(parse_real(part, section, key));
  }
  std::vector<std::string> canon;
  for (double d : out) canon.push_back(format_double(d));
  record(section, key, join(canon, ", "));
  return out;
}

std::vector<std::string> Config::words(const std::string& section, const std::string& key,
                                       const std::vector<std::string>& fallback) {
  const std::string* v = raw(section, key);
  std::vector<std::string> out = fallback;
  if (v) {
    out.clear();
    for (auto& part : split(*v, ','))
      if (!part.empty() && part != "none") out.push_back(part);
  }
  record(section, key, out.empty() ? "none" : join(out, ", "));
  return out;
}

void Config::reject_unused() const {
  std::vector<std::string> unused;
  for (const auto& [k, v] : values_) {
    auto it = resolved_.find(k.first);
    bool used = it != resolved_.end() &&
                std::any_of(it->second.begin(), it->second.end(), [&](const auto& e) { return e.first == k.second; });
    if (!used) unused.push_back(where(k.first, k.second));
  }
  if (!unused.empty()) throw ConfigError("unknown config key(s): " + join(unused, ", "));
}

std::string Config::echo() const {
  std::string out;
  for (const auto& section : section_order_) {
    if (!out.empty()) out += "\n";
    out += "[" + section + "]\n";
    for (const auto& [k, v] : resolved_.at(section)) out += k + " = " + v + "\n";
  }
  return out;
}

}  // namespace invnet::cli
