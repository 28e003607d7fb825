#pragma once

// Flat "dotted.key=value" text used by run configs, manifests and checkpoint
// headers.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace amp {

using KeyValues = std::map<std::string, std::string>;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest representation that parses back to the same double.
std::string format_double(double v);

double parse_double(std::string_view key, std::string_view text);
std::int64_t parse_int(std::string_view key, std::string_view text);
bool parse_bool(std::string_view key, std::string_view text);

// One "key=value" per line; blank lines and lines starting with '#' ignored.
KeyValues parse_key_values(std::string_view text);
std::string serialize_key_values(const KeyValues& kv);

// Splits "key=value"; throws ConfigError when '=' is missing or the key is empty.
std::pair<std::string, std::string> split_assignment(std::string_view text);

std::optional<std::string> lookup(const KeyValues& kv, const std::string& key);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
std::int64_t get_int(const KeyValues& kv, const std::string& key, std::int64_t fallback);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
std::string require(const KeyValues& kv, const std::string& key);

// Entries whose key starts with `prefix`, with the prefix stripped.
KeyValues with_prefix_stripped(const KeyValues& kv, std::string_view prefix);

}  // namespace amp
