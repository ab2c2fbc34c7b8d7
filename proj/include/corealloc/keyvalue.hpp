#pragma once

// Flat `key = value` configuration files. `#` starts a comment, `[section]`
// headers prefix following keys with `section.`. Values are kept as text and
// converted on access; list values are comma separated, optionally wrapped in
// brackets.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "corealloc/error.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

class KeyValueFile {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static KeyValueFile parse(std::istream& in, std::string source = "<config>") {
    KeyValueFile kv;
    kv.source_ = std::move(source);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string_view line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) kv.fail(line_no, "malformed section header");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) kv.fail(line_no, "expected 'key = value'");
      const auto key = detail::trim(line.substr(0, eq));
      auto value = detail::trim(line.substr(eq + 1));
      if (key.empty()) kv.fail(line_no, "empty key");
      for (char c : key) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                        c == '-' || c == '.';
        if (!ok) kv.fail(line_no, "malformed key '" + std::string(key) + "'");
      }
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      if (kv.entries_.contains(full)) kv.fail(line_no, "duplicate key '" + full + "'");
      kv.entries_[full] = Entry{std::string(value), line_no};
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  bool contains(const std::string& key) const { return entries_.contains(key); }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  const std::string& source() const noexcept { return source_; }

  /// Rejects keys outside `known` (after prefix stripping), naming the line.
  void require_known(const std::set<std::string>& known, const std::string& prefix = "") const {
    for (const auto& [key, entry] : entries_) {
      if (!prefix.empty() && key.rfind(prefix, 0) != 0) continue;
      const auto bare = key.substr(prefix.size());
      if (!known.contains(bare)) fail(entry.line, "unknown key '" + key + "'");
    }
  }

  /// Entries under `[name]` with the prefix removed; line numbers are kept.
  KeyValueFile section(const std::string& name) const {
    KeyValueFile out;
    out.source_ = source_;
    const std::string prefix = name + ".";
    for (const auto& [key, entry] : entries_) {
      if (key.rfind(prefix, 0) == 0) out.entries_[key.substr(prefix.size())] = entry;
    }
    return out;
  }

  /// Entries outside any section.
  KeyValueFile top_level() const {
    KeyValueFile out;
    out.source_ = source_;
    for (const auto& [key, entry] : entries_) {
      if (key.find('.') == std::string::npos) out.entries_[key] = entry;
    }
    return out;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return to_double(it->second.value, it->second.line, key);
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return to_uint(it->second.value, it->second.line, key);
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback = {}) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : list_items(it->second.value)) out.push_back(to_double(item, it->second.line, key));
    return out;
  }

  std::vector<std::uint64_t> get_uints(const std::string& key, std::vector<std::uint64_t> fallback = {}) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& item : list_items(it->second.value)) out.push_back(to_uint(item, it->second.line, key));
    return out;
  }

  std::size_t line_of(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  [[noreturn]] void fail(std::size_t line, const std::string& what) const {
    throw UsageError(source_ + ":" + std::to_string(line) + ": " + what);
  }

  static std::vector<std::string> list_items(std::string_view v) {
    v = detail::trim(v);
    if (!v.empty() && v.front() == '[') v.remove_prefix(1);
    if (!v.empty() && v.back() == ']') v.remove_suffix(1);
    std::vector<std::string> out;
    if (detail::trim(v).empty()) return out;
    for (auto cell : detail::split_commas(v)) out.emplace_back(cell);
    return out;
  }

 private:
  double to_double(std::string_view text, std::size_t line, const std::string& key) const {
    const auto v = detail::parse_double(detail::trim(text));
    if (!v) fail(line, "key '" + key + "': expected a number, got '" + std::string(text) + "'");
    return *v;
  }

  std::uint64_t to_uint(std::string_view text, std::size_t line, const std::string& key) const {
    text = detail::trim(text);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      fail(line, "key '" + key + "': expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return v;
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace corealloc
