#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace uarmor::keccak {

struct SpongeParams {
  static constexpr int width_bits = 200;
  static constexpr int rate_bits = 64;
  static constexpr int capacity_bits = 136;
};
static_assert(SpongeParams::rate_bits + SpongeParams::capacity_bits == SpongeParams::width_bits);
static_assert(SpongeParams::rate_bits % 8 == 0);

inline constexpr int kRounds = 18;
inline constexpr std::size_t kStateBytes = 25;
inline constexpr std::size_t kRateBytes = SpongeParams::rate_bits / 8;

/// Lane (x, y) lives at index x + 5*y; each lane is one byte.
using State = std::array<std::uint8_t, kStateBytes>;

extern const std::array<std::uint8_t, kRounds> kRoundConstants;
extern const std::array<int, 25> kRhoOffsets;

void permute(State& state);

enum class Phase : std::uint8_t { Absorbing = 0, Squeezing = 1 };

class Sponge {
 public:
  Sponge() = default;

  void absorb(std::span<const std::uint8_t> data);
  void squeeze(std::span<std::uint8_t> out);
  std::vector<std::uint8_t> squeeze_bits(std::size_t n_bits);

  const State& lanes() const { return state_; }
  Phase phase() const { return phase_; }
  unsigned offset_bits() const { return offset_ * 8; }
  std::uint64_t permutations() const { return permutations_; }

  /// Restores a sponge from its serialized fields (used when the state lives in simulated SRAM).
  static Sponge from_parts(const State& lanes, Phase phase, unsigned offset_bytes);

  bool operator==(const Sponge& other) const {
    return state_ == other.state_ && phase_ == other.phase_ && offset_ == other.offset_;
  }

 private:
  void run_permutation();
  void finalize();

  State state_{};
  Phase phase_ = Phase::Absorbing;
  unsigned offset_ = 0;
  std::uint64_t permutations_ = 0;
};

}  // namespace uarmor::keccak
