#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dictmlm::uni {

// NFC-normalize and lowercase a UTF-8 string. Throws DataError on invalid
// UTF-8. Lowercasing is the full Unicode simple mapping.
std::string normalize_word(const std::string& utf8);

// NFC only (no case folding).
std::string nfc(const std::string& utf8);

bool is_valid_utf8(const std::string& s);

// Decode UTF-8 into codepoints. Throws DataError on invalid input.
std::vector<char32_t> decode_utf8(const std::string& s);
std::string encode_utf8(const std::vector<char32_t>& cps);

bool is_whitespace(char32_t cp);
bool is_punct(char32_t cp);

}  // namespace dictmlm::uni
