#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wordpool::utf8 {

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Decodes one scalar starting at `pos` and advances `pos`. Rejects overlong
/// forms, surrogates and values above U+10FFFF.
inline char32_t next(std::string_view s, std::size_t& pos) {
  const auto start = pos;
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    ++pos;
    return b0;
  }
  int extra = 0;
  char32_t cp = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
    min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
    min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = b0 & 0x07;
    min = 0x10000;
  } else {
    throw DecodeError("invalid UTF-8 lead byte", start);
  }
  if (pos + extra >= s.size()) {
    throw DecodeError("truncated UTF-8 sequence", start);
  }
  for (int i = 1; i <= extra; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) throw DecodeError("invalid UTF-8 continuation byte", start + i);
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min) throw DecodeError("overlong UTF-8 sequence", start);
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw DecodeError("invalid code point", start);
  pos += extra + 1;
  return cp;
}

inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) out.push_back(next(s, pos));
  return out;
}

inline bool valid(std::string_view s) {
  try {
    std::size_t pos = 0;
    while (pos < s.size()) next(s, pos);
    return true;
  } catch (const DecodeError&) {
    return false;
  }
}

inline void append(std::string& out, char32_t cp) {
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

inline std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) append(out, cp);
  return out;
}

inline std::string encode(char32_t cp) {
  std::string out;
  append(out, cp);
  return out;
}

/// Splits a valid UTF-8 string into one string per scalar value.
inline std::vector<std::string> split_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto start = pos;
    next(s, pos);
    out.emplace_back(s.substr(start, pos - start));
  }
  return out;
}

inline std::size_t length(std::string_view s) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < s.size()) {
    next(s, pos);
    ++n;
  }
  return n;
}

/// Replaces every ill-formed subsequence with U+FFFD.
inline std::string repair(std::string_view s) {
  std::string out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto start = pos;
    try {
      next(s, pos);
      out.append(s.substr(start, pos - start));
    } catch (const DecodeError&) {
      append(out, 0xFFFD);
      pos = start + 1;
    }
  }
  return out;
}

}  // namespace wordpool::utf8
