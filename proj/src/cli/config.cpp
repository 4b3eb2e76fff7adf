#include "strv/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "strv/errors.hpp"

namespace strv::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = origin + ":" + std::to_string(number);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    cfg.values_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return parse(s.str(), path);
}

std::optional<std::string> ConfigFile::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::int64_t> ConfigFile::get_int(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  return parse_number<std::int64_t>(key, *v);
}

std::optional<std::uint64_t> ConfigFile::get_uint(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  return parse_number<std::uint64_t>(key, *v);
}

std::optional<double> ConfigFile::get_double(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  return parse_number<double>(key, *v);
}

std::optional<bool> ConfigFile::get_bool(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + *v + "'");
}

std::optional<std::vector<std::size_t>> ConfigFile::get_index_list(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  std::vector<std::size_t> out;
  std::string text = *v;
  if (!text.empty() && text.front() == '[' && text.back() == ']') text = text.substr(1, text.size() - 2);
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    out.push_back(parse_number<std::size_t>(key, tok));
  }
  return out;
}

std::string ConfigFile::to_text() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      sections[""].emplace_back(key, value);
    } else {
      sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), value);
    }
  }
  std::ostringstream out;
  bool first = true;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) out << (first ? "" : "\n") << '[' << name << "]\n";
    for (const auto& [k, v] : entries) {
      const bool quote = v.find('#') != std::string::npos || v != trim(v);
      out << k << " = " << (quote ? '"' + v + '"' : v) << '\n';
    }
    first = false;
  }
  return out.str();
}

}  // namespace strv::cli
