#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uarmor/firmware.hpp"
#include "uarmor/keccak.hpp"

namespace uarmor::scramble {

struct DiversificationSeed {
  std::array<std::uint8_t, 32> bytes{};

  /// Requires exactly 64 hex characters.
  static std::optional<DiversificationSeed> from_hex(std::string_view hex);
  std::string hex() const;

  bool operator==(const DiversificationSeed&) const = default;
};

enum class StubKind : std::uint8_t { Nop, Trap };

struct DiversifyConfig {
  bool enable_reg_reorder = true;
  bool enable_dead_code = true;
  StubKind dead_code_kind = StubKind::Nop;
  std::uint32_t max_stub_instructions = 4;
  bool enable_func_reorder = true;

  static DiversifyConfig none() { return {false, false, StubKind::Nop, 0, false}; }
};

/// Deterministic 32-bit stream from sponge(seed || tag [|| index]).
class SeedStream {
 public:
  SeedStream(const DiversificationSeed& seed, std::string_view tag);
  SeedStream(const DiversificationSeed& seed, std::string_view tag, std::uint32_t index);

  std::uint32_t next32();
  /// Uniform in [0, bound) by rejection sampling.
  std::uint32_t uniform(std::uint32_t bound);

 private:
  keccak::Sponge sponge_;
};

template <class T>
void shuffle(SeedStream& stream, std::vector<T>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = stream.uniform(std::uint32_t(i));
    std::swap(items[i - 1], items[j]);
  }
}

inline constexpr std::string_view kStubLabel = "__stub";

fw::FunctionDef reorder_register_preservation(fw::FunctionDef fn, SeedStream& stream);
fw::FunctionDef insert_dead_code(fw::FunctionDef fn, const DiversifyConfig& config, SeedStream& stream);
fw::FirmwareModule reorder_functions(fw::FirmwareModule m, SeedStream& stream);

/// Register reordering, dead-code stubs, then function reordering, each on its own stream.
/// Functions without a canonical prologue are left alone and reported in `warnings`.
fw::FirmwareModule diversify(fw::FirmwareModule m, const DiversificationSeed& seed, const DiversifyConfig& config,
                             std::vector<std::string>* warnings = nullptr);

/// Per-variant seed for batch builds: sponge(seed_base || index).
DiversificationSeed derive_variant_seed(const DiversificationSeed& base, std::uint32_t index);

}  // namespace uarmor::scramble
