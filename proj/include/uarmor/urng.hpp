#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uarmor/keccak.hpp"

namespace uarmor::urng {

enum class ReseedMode : std::uint8_t { Consistent = 0, Periodic = 1 };

struct ReseedPolicy {
  ReseedMode mode = ReseedMode::Consistent;
  std::uint32_t threshold_bytes = 1u << 30;
  /// Simulated milliseconds a periodic reseed may spend sampling sources.
  std::uint32_t max_reseed_duration_ms = 20;
};

struct RngConfig {
  unsigned security_strength_bits = 128;
  unsigned seed_min_entropy_bits = 256;
  ReseedPolicy reseed;

  void validate() const;
};

/// Entropy is tracked in millibits so that fractional per-sample credits add up exactly.
using Millibits = std::uint64_t;

struct EntropyModel {
  std::size_t sram_size_bytes = 64 * 1024;
  double sram_entropy_density = 0.05;
  double jitter_bits_per_sample = 0.5;
  double adc_bits_per_sample = 0.0;

  Millibits seed_credit(std::size_t suv_bytes) const;
};

/// Minimum SUV bytes required to credit `bits` at the model's density.
std::size_t min_suv_bytes(const EntropyModel& model, unsigned bits);

class SramDevice {
 public:
  /// `unstable_fraction` of the cells get a bias in (0, 1); the rest power up to a fixed value.
  static SramDevice manufacture(std::uint64_t device_seed, std::size_t size_bytes,
                                double unstable_fraction = 0.05, double boot_noise = 0.0);
  static SramDevice from_biases(std::vector<double> bit_biases, double boot_noise);

  std::vector<std::uint8_t> sample(std::uint64_t boot_seed) const;

  std::size_t size_bytes() const { return stable_bits_.size(); }
  double boot_noise() const { return boot_noise_; }
  double bias(std::size_t bit) const;

 private:
  struct UnstableCell {
    std::uint32_t bit;
    double bias;
  };
  std::vector<std::uint8_t> stable_bits_;
  std::vector<UnstableCell> unstable_;
  double boot_noise_ = 0.0;
  std::uint64_t device_seed_ = 0;
};

std::vector<std::uint8_t> sram_startup_sample(const SramDevice& device, std::uint64_t boot_seed);

struct ClockModel {
  double nominal_period_ps = 20000.0;
  double jitter_stddev_ps = 40.0;
  double quantum_ps = 10.0;
  /// Simulated time to take one sample.
  double sample_time_us = 25.0;
  std::uint64_t sim_seed = 1;
};

class JitterSource {
 public:
  JitterSource(ClockModel model, double bits_per_sample);

  std::vector<std::uint8_t> sample(std::size_t n);
  Millibits credit_per_sample() const { return credit_; }
  const ClockModel& model() const { return model_; }

 private:
  double next_gaussian();

  ClockModel model_;
  std::mt19937_64 gen_;
  Millibits credit_;
};

std::vector<std::uint8_t> jitter_sample(const ClockModel& model, std::size_t n);

class AdcSource {
 public:
  AdcSource(std::uint64_t sim_seed, double bits_per_sample, double lsb_bias = 0.5);
  std::vector<std::uint8_t> sample(std::size_t n);
  Millibits credit_per_sample() const { return credit_; }

 private:
  std::mt19937_64 gen_;
  double lsb_bias_;
  Millibits credit_;
};

struct EntropySources {
  std::optional<JitterSource> jitter;
  std::optional<AdcSource> adc;
  double sample_time_us = 25.0;

  static EntropySources defaults(const EntropyModel& model, std::uint64_t sim_seed);
};

struct EntropyLedger {
  Millibits seed_credit = 0;
  Millibits reseed_credit = 0;
  std::uint64_t output_bytes = 0;
  std::uint64_t reseeds = 0;
  std::uint64_t starvations = 0;

  Millibits total() const { return seed_credit + reseed_credit; }
};

struct ReseedEvent {
  std::uint64_t output_bytes;
  Millibits credited;
  bool starved;
};

inline constexpr std::size_t kControlBlockBytes = 52;

class RngState {
 public:
  std::uint32_t rand32();
  void reseed_control();

  const keccak::Sponge& sponge() const { return sponge_; }
  const EntropyLedger& ledger() const { return ledger_; }
  const RngConfig& config() const { return config_; }
  std::uint32_t reseed_counter() const { return counter_; }
  void set_reseed_counter(std::uint32_t value) { counter_ = value; }
  const std::vector<ReseedEvent>& reseed_events() const { return events_; }
  EntropySources& sources() { return sources_; }

  /// Layout of the control block kept in simulated SRAM.
  std::array<std::uint8_t, kControlBlockBytes> serialize() const;

 private:
  friend RngState rng_init(const RngConfig&, std::span<const std::uint8_t>, const EntropyModel&,
                           EntropySources);

  Millibits gather(std::size_t max_samples, Millibits target);

  RngConfig config_;
  keccak::Sponge sponge_;
  EntropySources sources_;
  EntropyLedger ledger_;
  std::uint32_t counter_ = 0;
  std::uint64_t pending_output_bits_ = 0;
  std::vector<ReseedEvent> events_;
};

RngState rng_init(const RngConfig& config, std::span<const std::uint8_t> suv_bytes,
                  const EntropyModel& model, EntropySources sources);
RngState rng_init(const RngConfig& config, std::span<const std::uint8_t> suv_bytes,
                  const EntropyModel& model);

/// XOR-folds a little-endian 64-bit squeeze block into 32 bits.
inline std::uint32_t fold64(std::uint64_t v) { return std::uint32_t(v >> 32) ^ std::uint32_t(v); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Uniform double in [0, 1) from 53 random bits; identical on every platform.
inline double unit_double(std::mt19937_64& gen) { return double(gen() >> 11) * 0x1.0p-53; }

}  // namespace uarmor::urng
