#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uarmor/firmware.hpp"

namespace uarmor::fw {

enum class SymbolKind : std::uint8_t {
  Function = 1,
  Global = 2,
  Local = 3,
  Padding = 4,
  Section = 5,
};

enum FunctionFlag : std::uint8_t {
  kFnSensitive = 1,
  kFnSsp = 2,
  kFnInit = 4,
  kFnLock = 8,
};

/// Image-wide build flags stored in the header.
enum ImageFlag : std::uint32_t {
  kImageSsp = 1u << 0,
  kImageUrng = 1u << 1,
  kImageEsp = 1u << 2,
  kImageTerminatorCanary = 1u << 3,
  kImageRamScenario = 1u << 4,
  kImagePolicyShift = 8,  // 3-bit violation policy
};

struct ImageSymbol {
  SymbolKind kind = SymbolKind::Function;
  std::uint8_t flags = 0;
  std::string name;
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  /// Functions: address of the first body instruction after the prologue.
  /// Locals: frame size of the owning function.
  std::uint32_t aux = 0;

  bool operator==(const ImageSymbol&) const = default;
};

struct FlatImage {
  std::uint32_t flash_base = 0;
  std::uint32_t entry = 0;
  std::uint32_t data_base = 0;
  std::uint32_t data_size = 0;
  std::uint32_t flags = 0;
  std::vector<ImageSymbol> symbols;
  std::vector<std::uint8_t> code;
  std::vector<std::uint8_t> data_init;

  std::optional<std::uint32_t> symbol(std::string_view name) const;
  const ImageSymbol* find(std::string_view name, SymbolKind kind) const;
  const ImageSymbol* function_at(std::uint32_t addr) const;
  std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> function_ranges() const;
  std::map<std::string, std::uint32_t> symbol_table() const;
  /// [start, end) of the sensitive code section (including alignment padding), if any.
  std::optional<std::pair<std::uint32_t, std::uint32_t>> sensitive_section() const;
  std::uint32_t code_end() const { return flash_base + std::uint32_t(code.size()); }
  std::uint32_t word_at(std::uint32_t addr) const;

  bool operator==(const FlatImage&) const = default;
};

struct LayoutOptions {
  std::uint32_t flash_base = 0;
  std::uint32_t flash_size = 256 * 1024;
  std::uint32_t data_base = 0x20002000;
  /// Pad the sensitive section so a single MPU overlay covers it exactly.
  bool align_sensitive = false;
  std::uint32_t flags = 0;
};

/// Size the sensitive section is padded to so that an aligned region (with sub-regions) covers it.
std::uint32_t padded_sensitive_size(std::uint32_t size);

/// Computes the layout and resolves every symbolic operand.
FlatImage encode(const FirmwareModule& m, const LayoutOptions& opts = {});

/// The function's instructions with symbolic operands folded in, as the decoder will see them.
std::vector<Instruction> resolved_instructions(const FirmwareModule& m, std::string_view function,
                                               const LayoutOptions& opts = {});

struct DecodedFunction {
  std::string name;
  std::uint8_t flags = 0;
  std::uint32_t start = 0;
  std::vector<Instruction> insns;
};

/// Decodes every function range; throws Error(InvalidImage) on undecodable words.
std::vector<DecodedFunction> decode_image(const FlatImage& image);

std::vector<std::uint8_t> serialize(const FlatImage& image);
FlatImage parse_image(std::span<const std::uint8_t> bytes);

void write_image_file(const std::string& path, const FlatImage& image);
FlatImage read_image_file(const std::string& path);

/// Human-readable symbol map ("address size kind name").
std::string symbol_map(const FlatImage& image);

}  // namespace uarmor::fw
