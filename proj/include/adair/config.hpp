#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "adair/tensor.hpp"

namespace adair {

/// Flat "key = value" text, one pair per line; '#' starts a comment. Values
/// are taken out by key, and whatever is left over can be rejected as unknown.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text, std::string_view source = "config");

  void set(std::string key, std::string value);
  bool contains(std::string_view key) const;

  /// Consumes the key; nullopt when absent.
  std::optional<std::string> take(std::string_view key);

  /// Throws InvalidConfig naming the first key nobody consumed.
  void reject_unused() const;

  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::set<std::string, std::less<>> used_;
  std::string source_;
};

Index parse_index(std::string_view value, std::string_view key);
double parse_double(std::string_view value, std::string_view key);
bool parse_bool(std::string_view value, std::string_view key);
std::vector<Index> parse_index_list(std::string_view value, std::string_view key);

/// Shortest text that parses back to exactly the same double.
std::string format_double(double value);
std::string format_index_list(const std::vector<Index>& values);

std::string read_text_file(const std::string& path);

}  // namespace adair
