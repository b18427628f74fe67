#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <string>
#include <system_error>

#include "attngen/errors.hpp"

namespace attngen {

// Shortest decimal form that round-trips the exact binary value; keeps every
// emitted artifact byte-reproducible without locale or printf quirks.
template <typename T>
std::string fmt_float(T value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last)
        throw ConfigError(what + ": cannot parse '" + text + "' as a number");
    return value;
}

inline std::string hex_words(const std::array<std::uint64_t, 4>& words) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint64_t w : words)
        for (int shift = 60; shift >= 0; shift -= 4)
            out.push_back(digits[(w >> shift) & 0xF]);
    return out;
}

inline std::array<std::uint64_t, 4> parse_hex_words(const std::string& text,
                                                    const std::string& what) {
    if (text.size() != 64) throw ConfigError(what + ": expected 64 hex digits");
    std::array<std::uint64_t, 4> words{};
    for (std::size_t i = 0; i < 64; ++i) {
        const char c = text[i];
        std::uint64_t d;
        if (c >= '0' && c <= '9')
            d = static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f')
            d = static_cast<std::uint64_t>(c - 'a' + 10);
        else
            throw ConfigError(what + ": invalid hex digit '" + std::string(1, c) + "'");
        words[i / 16] = (words[i / 16] << 4) | d;
    }
    return words;
}

}  // namespace attngen
