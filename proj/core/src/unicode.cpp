#include "deskmt/unicode.hpp"

#include "deskmt/error.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace deskmt::unicode {

std::u32string decode(std::string_view utf8) {
    std::u32string out;
    out.reserve(utf8.size());
    const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
    const auto length = static_cast<int32_t>(utf8.size());
    int32_t i = 0;
    while (i < length) {
        const int32_t at = i;
        UChar32 c = 0;
        U8_NEXT(s, i, length, c);
        if (c < 0) {
            throw EncodingError("invalid UTF-8 at byte " + std::to_string(at));
        }
        out.push_back(static_cast<char32_t>(c));
    }
    return out;
}

std::string encode(std::u32string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char32_t cp : text) {
        out += encode(cp);
    }
    return out;
}

std::string encode(char32_t cp) {
    uint8_t buf[U8_MAX_LENGTH];
    int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf, n, U8_MAX_LENGTH, static_cast<UChar32>(cp), error);
    if (error) {
        throw EncodingError("code point out of range: " + std::to_string(static_cast<uint32_t>(cp)));
    }
    return {reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n)};
}

bool is_valid(std::string_view utf8) {
    const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
    const auto length = static_cast<int32_t>(utf8.size());
    int32_t i = 0;
    while (i < length) {
        UChar32 c = 0;
        U8_NEXT(s, i, length, c);
        if (c < 0) {
            return false;
        }
    }
    return true;
}

std::string nfc(std::string_view utf8) {
    if (!is_valid(utf8)) {
        throw EncodingError("invalid UTF-8 input to NFC");
    }
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) {
        throw EncodingError(std::string("ICU NFC unavailable: ") + u_errorName(status));
    }
    const auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
    if (normalizer->isNormalized(src, status) && U_SUCCESS(status)) {
        return std::string(utf8);
    }
    status = U_ZERO_ERROR;
    const icu::UnicodeString normalized = normalizer->normalize(src, status);
    if (U_FAILURE(status)) {
        throw EncodingError(std::string("NFC failed: ") + u_errorName(status));
    }
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

bool is_space(char32_t cp) {
    return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0;
}

std::string trim(std::string_view utf8) {
    const std::u32string cps = decode(utf8);
    std::size_t b = 0;
    std::size_t e = cps.size();
    while (b < e && is_space(cps[b])) {
        ++b;
    }
    while (e > b && is_space(cps[e - 1])) {
        --e;
    }
    return encode(std::u32string_view(cps).substr(b, e - b));
}

}  // namespace deskmt::unicode
