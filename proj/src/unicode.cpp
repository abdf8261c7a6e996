#include "dictmlm/unicode.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "dictmlm/common.hpp"

namespace dictmlm::uni {

namespace {

const icu::Normalizer2& nfc_normalizer() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) {
    fail_data("ICU NFC normalizer unavailable: ", u_errorName(status));
  }
  return *n;
}

icu::UnicodeString from_utf8_checked(const std::string& s) {
  if (!is_valid_utf8(s)) fail_data("invalid UTF-8 input: \"", s, "\"");
  return icu::UnicodeString::fromUTF8(icu::StringPiece(s));
}

std::string to_utf8(const icu::UnicodeString& us) {
  std::string out;
  us.toUTF8String(out);
  return out;
}

}  // namespace

bool is_valid_utf8(const std::string& s) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
  std::int32_t i = 0;
  const auto len = static_cast<std::int32_t>(s.size());
  while (i < len) {
    UChar32 cp;
    U8_NEXT(bytes, i, len, cp);
    if (cp < 0) return false;
  }
  return true;
}

std::string nfc(const std::string& utf8) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString out = nfc_normalizer().normalize(from_utf8_checked(utf8), status);
  if (U_FAILURE(status)) fail_data("NFC normalization failed: ", u_errorName(status));
  return to_utf8(out);
}

std::string normalize_word(const std::string& utf8) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString us = nfc_normalizer().normalize(from_utf8_checked(utf8), status);
  if (U_FAILURE(status)) fail_data("NFC normalization failed: ", u_errorName(status));
  icu::UnicodeString lowered;
  for (std::int32_t i = 0; i < us.length();) {
    UChar32 cp = us.char32At(i);
    lowered.append(static_cast<UChar32>(u_tolower(cp)));
    i += U16_LENGTH(cp);
  }
  // Lowercasing can de-normalize in rare scripts; re-apply NFC.
  icu::UnicodeString out = nfc_normalizer().normalize(lowered, status);
  if (U_FAILURE(status)) fail_data("NFC normalization failed: ", u_errorName(status));
  return to_utf8(out);
}

std::vector<char32_t> decode_utf8(const std::string& s) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
  std::int32_t i = 0;
  const auto len = static_cast<std::int32_t>(s.size());
  std::vector<char32_t> out;
  out.reserve(s.size());
  while (i < len) {
    UChar32 cp;
    U8_NEXT(bytes, i, len, cp);
    if (cp < 0) fail_data("invalid UTF-8 at byte offset ", i);
    out.push_back(static_cast<char32_t>(cp));
  }
  return out;
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size() * 2);
  for (char32_t cp : cps) {
    std::uint8_t buf[4];
    std::int32_t n = 0;
    UBool err = false;
    U8_APPEND(buf, n, 4, static_cast<UChar32>(cp), err);
    if (err) fail_data("cannot encode codepoint ", static_cast<std::uint32_t>(cp));
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
  return out;
}

bool is_whitespace(char32_t cp) {
  if (cp == '\t' || cp == '\n' || cp == '\r' || cp == ' ') return true;
  return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0;
}

bool is_punct(char32_t cp) {
  // ASCII non-alphanumeric printables count as punctuation (BERT-style),
  // beyond Unicode's P* categories: covers $, +, <, =, >, ^, `, |, ~.
  if ((cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) ||
      (cp >= 91 && cp <= 96) || (cp >= 123 && cp <= 126)) {
    return true;
  }
  return u_ispunct(static_cast<UChar32>(cp)) != 0;
}

}  // namespace dictmlm::uni
