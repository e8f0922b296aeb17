#pragma once

#include <string>
#include <string_view>

namespace adetag::utf8 {

// All character offsets in the toolkit are unicode scalar-value offsets.
// Text is stored as UTF-8 and converted at the boundaries with these helpers.

/// Decodes UTF-8; throws ParseError on invalid sequences.
std::u32string decode(std::string_view text);
std::string encode(std::u32string_view text);
std::string encode(char32_t cp);

/// Number of scalar values in a UTF-8 string.
std::size_t length(std::string_view text);

/// Substring by scalar-value offsets [start, end).
std::string slice(std::string_view text, std::size_t start, std::size_t end);

bool is_space(char32_t cp);
bool is_punct(char32_t cp);
bool is_alpha(char32_t cp);

/// ASCII and Latin-1 lowercase folding; other scripts are returned unchanged.
char32_t to_lower(char32_t cp);
std::u32string to_lower(std::u32string_view text);

}  // namespace adetag::utf8
