#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"

#include <cctype>
#include <charconv>

namespace uarmor {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientSeedEntropy: return "InsufficientSeedEntropy";
    case ErrorCode::ImageOverflow: return "ImageOverflow";
    case ErrorCode::NonCanonicalPrologue: return "NonCanonicalPrologue";
    case ErrorCode::RegionBudgetExceeded: return "RegionBudgetExceeded";
    case ErrorCode::AlignmentUnsatisfiable: return "AlignmentUnsatisfiable";
    case ErrorCode::NoRegionFault: return "NoRegionFault";
    case ErrorCode::AlreadyLocked: return "AlreadyLocked";
    case ErrorCode::WorkloadDivergence: return "WorkloadDivergence";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidImage: return "InvalidImage";
  }
  return "Unknown";
}

std::string to_hex(ByteSpan bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::optional<Bytes> from_hex(std::string_view hex) {
  if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
  if (hex.size() % 2 != 0) return std::nullopt;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]);
    int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(std::uint8_t(hi << 4 | lo));
  }
  return out;
}

std::optional<std::uint64_t> parse_number(std::string_view text) {
  std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  std::uint64_t scale = 1;
  char last = t.back();
  if (last == 'K' || last == 'k') scale = 1024;
  if (last == 'M' || last == 'm') scale = 1024 * 1024;
  if (last == 'G' || last == 'g') scale = 1024ull * 1024 * 1024;
  if (scale != 1) t.pop_back();
  int base = 10;
  std::string_view digits = t;
  if (digits.starts_with("0x") || digits.starts_with("0X")) {
    base = 16;
    digits.remove_prefix(2);
  }
  if (digits.empty()) return std::nullopt;
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value, base);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return value * scale;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace uarmor
