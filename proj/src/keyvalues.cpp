#include "amplifier/keyvalues.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

namespace amp {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view text, std::string_view what) {
  throw ConfigError("invalid value for '" + std::string(key) + "': '" + std::string(text) +
                    "' (expected " + std::string(what) + ")");
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

double parse_double(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  const char* first = text.data();
  if (!text.empty() && text.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    bad_value(key, text, "a number");
  }
  return v;
}

std::int64_t parse_int(std::string_view key, std::string_view text) {
  text = trim(text);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    bad_value(key, text, "an integer");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  bad_value(key, text, "true/false");
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  }
  const auto key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + std::string(text) + "'");
  return {std::string(key), std::string(trim(text.substr(eq + 1)))};
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    try {
      auto [k, v] = split_assignment(line);
      kv[k] = v;
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return kv;
}

std::string serialize_key_values(const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  return os.str();
}

std::optional<std::string> lookup(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) return std::nullopt;
  return it->second;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto v = lookup(kv, key);
  return v ? parse_double(key, *v) : fallback;
}

std::int64_t get_int(const KeyValues& kv, const std::string& key, std::int64_t fallback) {
  auto v = lookup(kv, key);
  return v ? parse_int(key, *v) : fallback;
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto v = lookup(kv, key);
  return v ? parse_bool(key, *v) : fallback;
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto v = lookup(kv, key);
  return v ? *v : fallback;
}

std::string require(const KeyValues& kv, const std::string& key) {
  auto v = lookup(kv, key);
  if (!v) throw ConfigError("missing required key '" + key + "'");
  return *v;
}

KeyValues with_prefix_stripped(const KeyValues& kv, std::string_view prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv) {
    if (k.size() > prefix.size() && std::string_view(k).substr(0, prefix.size()) == prefix) {
      out[k.substr(prefix.size())] = v;
    }
  }
  return out;
}

}  // namespace amp
