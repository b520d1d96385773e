#include "cfw/keyvalue.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "cfw/error.hpp"

namespace cfw {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": empty key");
        if (!kv.emplace(key, value).second) {
            throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return kv;
}

std::string format_key_values(const KeyValues &kv) {
    std::string out;
    for (const auto &[k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

int parse_int(const std::string &key, const std::string &value) {
    int out = 0;
    const auto *end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorCode::Config, "key '" + key + "': expected an integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string &key, const std::string &value) {
    double out = 0;
    const auto *end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorCode::Config, "key '" + key + "': expected a number, got '" + value + "'");
    }
    return out;
}

std::vector<int> parse_int_list(const std::string &key, const std::string &value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, std::string(trim(item))));
    if (out.empty()) throw Error(ErrorCode::Config, "key '" + key + "': empty list");
    return out;
}

std::string format_int_list(const std::vector<int> &values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace cfw
