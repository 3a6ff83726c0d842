#include "adair/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace adair {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  fail(ErrorKind::InvalidConfig, "key '" + std::string(key) + "': expected " + expected + ", got '" +
                                     std::string(value) + "'");
}

}  // namespace

KeyValueText KeyValueText::parse(std::string_view text, std::string_view source) {
  KeyValueText out;
  out.source_ = std::string(source);
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty()) {
      fail(ErrorKind::InvalidConfig, out.source_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    if (out.entries_.contains(key)) {
      fail(ErrorKind::InvalidConfig, out.source_ + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    out.entries_.emplace(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

void KeyValueText::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

bool KeyValueText::contains(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> KeyValueText::take(std::string_view key) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  used_.insert(it->first);
  return it->second;
}

void KeyValueText::reject_unused() const {
  for (const auto& [key, value] : entries_) {
    if (!used_.contains(key)) fail(ErrorKind::InvalidConfig, source_ + ": unknown key '" + key + "'");
  }
}

Index parse_index(std::string_view value, std::string_view key) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return static_cast<Index>(v);
}

double parse_double(std::string_view value, std::string_view key) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return v;
}

bool parse_bool(std::string_view value, std::string_view key) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<Index> parse_index_list(std::string_view value, std::string_view key) {
  std::vector<Index> out;
  while (true) {
    const auto comma = value.find(',');
    out.push_back(parse_index(trim(value.substr(0, comma)), key));
    if (comma == std::string_view::npos) break;
    value = value.substr(comma + 1);
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::string format_index_list(const std::vector<Index>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace adair
