#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/unorm2.h>
#include <unicode/ustring.h>

#include "contrans/detail/unicode_tables.hpp"
#include "contrans/error.hpp"

namespace contrans::unicode {

/// Decodes UTF-8; throws ValidationError on malformed input.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    auto bad = [&] { throw ValidationError("invalid UTF-8 at byte " + std::to_string(i)); };
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        char32_t cp;
        std::size_t len;
        if (b0 < 0x80) {
            cp = b0;
            len = 1;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            len = 4;
        } else {
            bad();
        }
        if (i + len > s.size()) bad();
        for (std::size_t k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80) bad();
            cp = (cp << 6) | (b & 0x3F);
        }
        // reject overlong forms, surrogates and out-of-range values
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
            (cp >= 0xD800 && cp <= 0xDFFF))
            bad();
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string encode_utf8(const std::vector<char32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t c : cps) append_utf8(out, c);
    return out;
}

namespace detail {

template <std::size_t N>
bool in_ranges(const contrans::detail::CodepointRange (&table)[N], char32_t cp) {
    auto it = std::upper_bound(std::begin(table), std::end(table), static_cast<std::uint32_t>(cp),
                               [](std::uint32_t v, const contrans::detail::CodepointRange& r) { return v < r.lo; });
    if (it == std::begin(table)) return false;
    --it;
    return cp <= it->hi;
}

}  // namespace detail

inline bool is_letter(char32_t cp) { return detail::in_ranges(contrans::detail::kLetterRanges, cp); }
inline bool is_number(char32_t cp) { return detail::in_ranges(contrans::detail::kNumberRanges, cp); }

/// Unicode White_Space property.
inline bool is_whitespace(char32_t cp) {
    return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
           (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
           cp == 0x3000;
}

/// Canonical composition (NFC). ASCII input is returned unchanged.
inline std::string nfc(std::string_view s) {
    if (std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; }))
        return std::string(s);
    UErrorCode status = U_ZERO_ERROR;
    const UNormalizer2* norm = unorm2_getNFCInstance(&status);
    if (U_FAILURE(status)) throw Error(ErrorCategory::runtime, "ICU NFC normalizer unavailable");

    std::vector<UChar> utf16(s.size() + 1);
    int32_t len16 = 0;
    u_strFromUTF8(utf16.data(), static_cast<int32_t>(utf16.size()), &len16, s.data(), static_cast<int32_t>(s.size()), &status);
    if (U_FAILURE(status)) throw ValidationError("invalid UTF-8 passed to NFC normalizer");

    std::vector<UChar> normalized(static_cast<std::size_t>(len16) * 3 + 16);
    const int32_t n = unorm2_normalize(norm, utf16.data(), len16, normalized.data(), static_cast<int32_t>(normalized.size()), &status);
    if (U_FAILURE(status)) throw Error(ErrorCategory::runtime, "NFC normalization failed");

    std::string out(static_cast<std::size_t>(n) * 4 + 4, '\0');
    int32_t len8 = 0;
    u_strToUTF8(out.data(), static_cast<int32_t>(out.size()), &len8, normalized.data(), n, &status);
    if (U_FAILURE(status)) throw Error(ErrorCategory::runtime, "NFC re-encoding failed");
    out.resize(static_cast<std::size_t>(len8));
    return out;
}

}  // namespace contrans::unicode
