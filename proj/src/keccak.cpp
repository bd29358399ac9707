#include "uarmor/keccak.hpp"

#include <cassert>

namespace uarmor::keccak {

const std::array<std::uint8_t, kRounds> kRoundConstants = {
    0x01, 0x82, 0x8A, 0x00, 0x8B, 0x01, 0x81, 0x09, 0x8A,
    0x88, 0x09, 0x0A, 0x8B, 0x8B, 0x89, 0x03, 0x02, 0x80,
};

// Offsets already reduced mod 8 (lane width).
const std::array<int, 25> kRhoOffsets = {
    0, 1, 6, 4, 3,  //
    4, 4, 6, 7, 4,  //
    3, 2, 3, 1, 7,  //
    1, 5, 7, 5, 0,  //
    2, 2, 5, 0, 6,  //
};

namespace {

inline std::uint8_t rotl8(std::uint8_t v, int n) {
  n &= 7;
  if (n == 0) return v;
  return std::uint8_t((v << n) | (v >> (8 - n)));
}

}  // namespace

void permute(State& a) {
  for (int round = 0; round < kRounds; ++round) {
    std::uint8_t c[5];
    for (int x = 0; x < 5; ++x) c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
    for (int x = 0; x < 5; ++x) {
      std::uint8_t d = c[(x + 4) % 5] ^ rotl8(c[(x + 1) % 5], 1);
      for (int y = 0; y < 25; y += 5) a[y + x] ^= d;
    }

    State b;
    for (int x = 0; x < 5; ++x) {
      for (int y = 0; y < 5; ++y) {
        // pi: (x, y) -> (y, 2x + 3y)
        b[y + 5 * ((2 * x + 3 * y) % 5)] = rotl8(a[x + 5 * y], kRhoOffsets[x + 5 * y]);
      }
    }

    for (int y = 0; y < 25; y += 5) {
      for (int x = 0; x < 5; ++x) {
        a[y + x] = b[y + x] ^ std::uint8_t(~b[y + (x + 1) % 5] & b[y + (x + 2) % 5]);
      }
    }
    a[0] ^= kRoundConstants[round];
  }
}

void Sponge::run_permutation() {
  permute(state_);
  ++permutations_;
}

void Sponge::absorb(std::span<const std::uint8_t> data) {
  if (phase_ == Phase::Squeezing) {
    phase_ = Phase::Absorbing;
    offset_ = 0;
  }
  for (auto byte : data) {
    state_[offset_++] ^= byte;
    if (offset_ == kRateBytes) {
      run_permutation();
      offset_ = 0;
    }
  }
}

void Sponge::finalize() {
  state_[offset_] ^= 0x01;
  state_[kRateBytes - 1] ^= 0x80;
  run_permutation();
  offset_ = 0;
  phase_ = Phase::Squeezing;
}

void Sponge::squeeze(std::span<std::uint8_t> out) {
  if (phase_ == Phase::Absorbing) finalize();
  for (auto& byte : out) {
    byte = state_[offset_++];
    if (offset_ == kRateBytes) {
      run_permutation();
      offset_ = 0;
    }
  }
}

std::vector<std::uint8_t> Sponge::squeeze_bits(std::size_t n_bits) {
  assert(n_bits % 8 == 0);
  std::vector<std::uint8_t> out(n_bits / 8);
  squeeze(out);
  return out;
}

Sponge Sponge::from_parts(const State& lanes, Phase phase, unsigned offset_bytes) {
  Sponge s;
  s.state_ = lanes;
  s.phase_ = phase;
  s.offset_ = offset_bytes % kRateBytes;
  return s;
}

}  // namespace uarmor::keccak
