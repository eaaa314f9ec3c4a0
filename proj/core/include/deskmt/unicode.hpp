#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace deskmt::unicode {

/// Decodes UTF-8 into code points. Throws EncodingError on malformed input.
std::u32string decode(std::string_view utf8);

/// Encodes code points as UTF-8.
std::string encode(std::u32string_view text);
std::string encode(char32_t cp);

bool is_valid(std::string_view utf8);

/// Canonical composition (NFC). Throws EncodingError on malformed input.
std::string nfc(std::string_view utf8);

bool is_space(char32_t cp);

/// Trims Unicode whitespace at both ends.
std::string trim(std::string_view utf8);

}  // namespace deskmt::unicode
