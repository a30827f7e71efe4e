#pragma once

// Locale-independent number parsing/formatting and CSV field splitting.

#include "bmsdep/error.hpp"

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace bmsdep::text {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline bool try_parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

inline double parse_double(std::string_view s, std::string_view what) {
    double v = 0.0;
    if (!try_parse_double(s, v))
        throw ValidationError(std::string(what) + ": '" + std::string(s) + "' is not a number");
    return v;
}

inline bool try_parse_int(std::string_view s, long long& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

inline long long parse_int(std::string_view s, std::string_view what) {
    long long v = 0;
    if (!try_parse_int(s, v))
        throw ValidationError(std::string(what) + ": '" + std::string(s) + "' is not an integer");
    return v;
}

inline std::vector<double> parse_double_list(std::string_view s, std::string_view what) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const auto& item : split(s, ',')) out.push_back(parse_double(item, what));
    return out;
}

/// Shortest representation that round-trips exactly.
inline std::string format(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/// FNV-1a, used for config hashes in run manifests.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace bmsdep::text
