#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace strv::cli {

// Flat key = value text with [section] headers. Keys are addressed as
// "section.key"; keys before any header live in the "" section and are
// addressed by their bare name. '#' starts a comment outside quotes.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigFile load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Typed lookups throw ConfigError naming the key when the text does not
  // parse.
  std::optional<std::int64_t> get_int(const std::string& key) const;
  std::optional<std::uint64_t> get_uint(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  std::optional<std::vector<std::size_t>> get_index_list(const std::string& key) const;

  // Sections in name order, keys sorted within each.
  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace strv::cli
