#pragma once

// Line-oriented `key = value` text. '#' starts a comment; blank lines are
// ignored; keys are unique. Serialization writes keys in insertion order.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sapm {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text);
  static KeyValues load(const std::string& path);

  bool has(std::string_view key) const;
  void set(std::string key, std::string value);

  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  // Comma-separated list of numbers.
  std::vector<double> get_list(std::string_view key, std::vector<double> fallback) const;

  // Throws FormatError naming the first key not in `known`.
  void require_known(const std::vector<std::string_view>& known) const;

  std::string str() const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  const std::string* find(std::string_view key) const;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Shortest text that reads back to the same double.
std::string format_double(double v);

}  // namespace sapm
