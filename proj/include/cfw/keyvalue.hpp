#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cfw {

// Flat `key = value` document. Blank lines and lines starting with '#' are
// ignored. Keys are unique; a repeated key is a config error.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues &kv);

int parse_int(const std::string &key, const std::string &value);
double parse_double(const std::string &key, const std::string &value);
// Comma-separated integers, e.g. "8,16,32".
std::vector<int> parse_int_list(const std::string &key, const std::string &value);
std::string format_int_list(const std::vector<int> &values);
// Shortest representation that round-trips through parse_double.
std::string format_double(double value);

}  // namespace cfw
