#pragma once

// Flat INI-style key/value reader.
//
//   # comment            ; comment
//   [section]
//   key = value
//
// Keys are addressed as "section.key". Every lookup marks the key as used so
// callers can reject leftovers as unknown.

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace relloc {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& field, const std::string& what)
      : std::runtime_error(format(line, field, what)), line_(line), field_(field) {}

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(int line, const std::string& field, const std::string& what) {
    std::string out = "config";
    if (line > 0) out += ":" + std::to_string(line);
    if (!field.empty()) out += ": " + field;
    return out + ": " + what;
  }

  int line_;
  std::string field_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line{0};
    mutable bool used{false};
  };

  static ConfigFile parse(std::string_view text) {
    ConfigFile cfg;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      std::string_view line = raw;
      if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(line_no, "", "unterminated section header");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        if (section.empty()) throw ConfigError(line_no, "", "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(line_no, "", "expected 'key = value'");
      const std::string key(detail::trim(line.substr(0, eq)));
      if (key.empty()) throw ConfigError(line_no, "", "missing key before '='");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.entries_.count(full)) {
        throw ConfigError(line_no, full, "duplicate key (first set on line " + std::to_string(cfg.entries_[full].line) + ")");
      }
      cfg.entries_[full] = Entry{std::string(detail::trim(line.substr(eq + 1))), line_no};
    }
    return cfg;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  const Entry* find(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  void set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0}; }

  void get(const std::string& key, double& out) const {
    if (const Entry* e = find(key)) out = parse_double(*e, key);
  }

  void get(const std::string& key, int& out) const {
    if (const Entry* e = find(key)) out = parse_int<int>(*e, key);
  }

  void get(const std::string& key, std::uint64_t& out) const {
    if (const Entry* e = find(key)) out = parse_int<std::uint64_t>(*e, key);
  }

  void get(const std::string& key, bool& out) const {
    if (const Entry* e = find(key)) {
      if (e->value == "true" || e->value == "1" || e->value == "yes") {
        out = true;
      } else if (e->value == "false" || e->value == "0" || e->value == "no") {
        out = false;
      } else {
        throw ConfigError(e->line, key, "expected a boolean, got '" + e->value + "'");
      }
    }
  }

  void get(const std::string& key, std::string& out) const {
    if (const Entry* e = find(key)) out = e->value;
  }

  void get(const std::string& key, std::vector<double>& out) const {
    if (const Entry* e = find(key)) {
      out.clear();
      std::string_view rest = e->value;
      while (true) {
        const auto comma = rest.find(',');
        const std::string_view item = detail::trim(rest.substr(0, comma));
        out.push_back(parse_double(Entry{std::string(item), e->line}, key));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
    }
  }

  int line_of(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  // Throws on the first key no getter asked for.
  void reject_unused() const {
    const Entry* worst = nullptr;
    std::string name;
    for (const auto& [k, e] : entries_) {
      if (!e.used && (!worst || e.line < worst->line)) {
        worst = &e;
        name = k;
      }
    }
    if (worst) throw ConfigError(worst->line, name, "unknown key");
  }

 private:
  static double parse_double(const Entry& e, const std::string& key) {
    double v = 0.0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const auto [ptr, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(e.line, key, "expected a number, got '" + e.value + "'");
    return v;
  }

  template <typename I>
  static I parse_int(const Entry& e, const std::string& key) {
    I v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const auto [ptr, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(e.line, key, "expected an integer, got '" + e.value + "'");
    return v;
  }

  std::map<std::string, Entry> entries_;
};

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

inline std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace relloc
