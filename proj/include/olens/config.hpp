#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace olens {

// Flat run configuration stored as tab-separated `dotted.key<TAB>value`
// lines, one entry per line.  Order and raw value bytes are preserved, so a
// parsed file serializes back to exactly the bytes it was read from.
class RunConfig {
 public:
  RunConfig() = default;

  // Parses the strict format: every line is `key<TAB>value` where the key is
  // non-empty, contains no whitespace, and appears at most once.  The value
  // is everything after the first tab (it may itself contain tabs).
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  // Raises a configuration error when the key is absent.
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  // Inserts a new entry or replaces the value of an existing one in place.
  void set(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace olens
