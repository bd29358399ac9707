#include "uarmor/urng.hpp"

#include <cmath>
#include <numbers>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"

namespace uarmor::urng {

namespace {

Millibits to_millibits(double bits) { return Millibits(std::llround(bits * 1000.0)); }

}  // namespace

void RngConfig::validate() const {
  if (seed_min_entropy_bits < 2 * security_strength_bits) {
    throw Error(ErrorCode::InvalidArgument, "seed entropy must be at least twice the security strength");
  }
  if (reseed.threshold_bytes > (1u << 30) || reseed.threshold_bytes == 0) {
    throw Error(ErrorCode::InvalidArgument, "reseed threshold must be in (0, 2^30] bytes");
  }
}

Millibits EntropyModel::seed_credit(std::size_t suv_bytes) const {
  return Millibits(suv_bytes) * 8 * to_millibits(sram_entropy_density);
}

std::size_t min_suv_bytes(const EntropyModel& model, unsigned bits) {
  Millibits per_byte = 8 * to_millibits(model.sram_entropy_density);
  if (per_byte == 0) return SIZE_MAX;
  Millibits need = Millibits(bits) * 1000;
  return std::size_t((need + per_byte - 1) / per_byte);
}

// --- SRAM startup values ---

SramDevice SramDevice::manufacture(std::uint64_t device_seed, std::size_t size_bytes,
                                   double unstable_fraction, double boot_noise) {
  SramDevice dev;
  dev.device_seed_ = device_seed;
  dev.boot_noise_ = boot_noise;
  dev.stable_bits_.assign(size_bytes, 0);
  std::mt19937_64 gen(splitmix64(device_seed));
  for (std::size_t bit = 0; bit < size_bytes * 8; ++bit) {
    if (unit_double(gen) < unstable_fraction) {
      double b = unit_double(gen);
      if (b == 0.0) b = 0.5;
      dev.unstable_.push_back({std::uint32_t(bit), b});
    } else if (gen() & 1) {
      dev.stable_bits_[bit / 8] |= std::uint8_t(1u << (bit % 8));
    }
  }
  return dev;
}

SramDevice SramDevice::from_biases(std::vector<double> bit_biases, double boot_noise) {
  SramDevice dev;
  dev.boot_noise_ = boot_noise;
  dev.stable_bits_.assign((bit_biases.size() + 7) / 8, 0);
  for (std::size_t bit = 0; bit < bit_biases.size(); ++bit) {
    double b = bit_biases[bit];
    if (b >= 1.0) {
      dev.stable_bits_[bit / 8] |= std::uint8_t(1u << (bit % 8));
    } else if (b > 0.0) {
      dev.unstable_.push_back({std::uint32_t(bit), b});
    }
  }
  return dev;
}

double SramDevice::bias(std::size_t bit) const {
  for (const auto& cell : unstable_) {
    if (cell.bit == bit) return cell.bias;
  }
  return (stable_bits_[bit / 8] >> (bit % 8)) & 1 ? 1.0 : 0.0;
}

std::vector<std::uint8_t> SramDevice::sample(std::uint64_t boot_seed) const {
  std::vector<std::uint8_t> out = stable_bits_;
  std::mt19937_64 gen(splitmix64(device_seed_ ^ splitmix64(boot_seed + 0x5EED)));
  for (const auto& cell : unstable_) {
    if (unit_double(gen) < cell.bias) out[cell.bit / 8] |= std::uint8_t(1u << (cell.bit % 8));
  }
  if (boot_noise_ > 0.0) {
    for (std::size_t bit = 0; bit < out.size() * 8; ++bit) {
      if (unit_double(gen) < boot_noise_) out[bit / 8] ^= std::uint8_t(1u << (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint8_t> sram_startup_sample(const SramDevice& device, std::uint64_t boot_seed) {
  return device.sample(boot_seed);
}

// --- auxiliary sources ---

JitterSource::JitterSource(ClockModel model, double bits_per_sample)
    : model_(model), gen_(splitmix64(model.sim_seed)),
      credit_(model.jitter_stddev_ps > 0.0 ? to_millibits(bits_per_sample) : 0) {}

double JitterSource::next_gaussian() {
  double u1 = 1.0 - unit_double(gen_);
  double u2 = unit_double(gen_);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::uint8_t> JitterSource::sample(std::size_t n) {
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) {
    double period = model_.nominal_period_ps;
    if (model_.jitter_stddev_ps > 0.0) period += model_.jitter_stddev_ps * next_gaussian();
    auto ticks = std::llround(period / model_.quantum_ps);
    b = std::uint8_t(ticks & 0xFF);
  }
  return out;
}

std::vector<std::uint8_t> jitter_sample(const ClockModel& model, std::size_t n) {
  return JitterSource(model, 0.5).sample(n);
}

AdcSource::AdcSource(std::uint64_t sim_seed, double bits_per_sample, double lsb_bias)
    : gen_(splitmix64(sim_seed ^ 0xADC)), lsb_bias_(lsb_bias), credit_(to_millibits(bits_per_sample)) {}

std::vector<std::uint8_t> AdcSource::sample(std::size_t n) {
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) {
    b = unit_double(gen_) < lsb_bias_ ? 1 : 0;
  }
  return out;
}

EntropySources EntropySources::defaults(const EntropyModel& model, std::uint64_t sim_seed) {
  EntropySources s;
  ClockModel clock;
  clock.sim_seed = sim_seed;
  s.sample_time_us = clock.sample_time_us;
  if (model.jitter_bits_per_sample > 0.0) s.jitter.emplace(clock, model.jitter_bits_per_sample);
  if (model.adc_bits_per_sample > 0.0) s.adc.emplace(sim_seed, model.adc_bits_per_sample);
  return s;
}

// --- generator ---

RngState rng_init(const RngConfig& config, std::span<const std::uint8_t> suv_bytes,
                  const EntropyModel& model, EntropySources sources) {
  config.validate();
  Millibits credit = model.seed_credit(suv_bytes.size());
  if (credit < Millibits(config.seed_min_entropy_bits) * 1000) {
    throw Error(ErrorCode::InsufficientSeedEntropy,
                std::to_string(suv_bytes.size()) + " SUV bytes credit " + std::to_string(credit / 1000) +
                    " bits, need " + std::to_string(config.seed_min_entropy_bits));
  }
  RngState st;
  st.config_ = config;
  st.sources_ = std::move(sources);
  st.sponge_.absorb(suv_bytes);
  st.sponge_.squeeze({});
  st.ledger_.seed_credit = credit;
  st.counter_ = 0;
  return st;
}

RngState rng_init(const RngConfig& config, std::span<const std::uint8_t> suv_bytes,
                  const EntropyModel& model) {
  return rng_init(config, suv_bytes, model, EntropySources::defaults(model, 1));
}

Millibits RngState::gather(std::size_t max_samples, Millibits target) {
  Millibits per_tick = 0;
  if (sources_.jitter) per_tick += sources_.jitter->credit_per_sample();
  if (sources_.adc) per_tick += sources_.adc->credit_per_sample();
  if (per_tick == 0) return 0;

  std::size_t ticks = std::size_t((target + per_tick - 1) / per_tick);
  if (ticks > max_samples) ticks = max_samples;
  Millibits credited = 0;
  if (ticks == 0) return 0;
  if (sources_.jitter) {
    auto bytes = sources_.jitter->sample(ticks);
    sponge_.absorb(bytes);
    credited += Millibits(ticks) * sources_.jitter->credit_per_sample();
  }
  if (sources_.adc) {
    auto bytes = sources_.adc->sample(ticks);
    sponge_.absorb(bytes);
    credited += Millibits(ticks) * sources_.adc->credit_per_sample();
  }
  return credited;
}

void RngState::reseed_control() {
  if (config_.reseed.mode == ReseedMode::Consistent) {
    std::uint64_t blocks = pending_output_bits_ / 64;
    if (blocks == 0) return;
    pending_output_bits_ -= blocks * 64;
    Millibits target = blocks * 1000;
    Millibits credited = gather(SIZE_MAX, target);
    ledger_.reseed_credit += credited;
    ++ledger_.reseeds;
    if (credited < target) {
      ++ledger_.starvations;
      events_.push_back({ledger_.output_bytes, credited, true});
    }
    return;
  }

  if (counter_ < config_.reseed.threshold_bytes) return;
  double budget_us = double(config_.reseed.max_reseed_duration_ms) * 1000.0;
  auto max_samples = std::size_t(budget_us / sources_.sample_time_us);
  Millibits target = Millibits(config_.seed_min_entropy_bits) * 1000;
  Millibits credited = gather(max_samples, target);
  ledger_.reseed_credit += credited;
  ++ledger_.reseeds;
  bool starved = credited < target;
  if (starved) ++ledger_.starvations;
  events_.push_back({ledger_.output_bytes, credited, starved});
  counter_ = 0;
}

std::uint32_t RngState::rand32() {
  std::uint8_t block[8];
  sponge_.squeeze(block);
  std::uint64_t v = std::uint64_t(load_le32(block)) | std::uint64_t(load_le32(block + 4)) << 32;
  ledger_.output_bytes += 8;
  counter_ += 8;
  pending_output_bits_ += 64;
  reseed_control();
  return fold64(v);
}

std::array<std::uint8_t, kControlBlockBytes> RngState::serialize() const {
  std::array<std::uint8_t, kControlBlockBytes> out{};
  const auto& lanes = sponge_.lanes();
  std::copy(lanes.begin(), lanes.end(), out.begin());
  out[25] = std::uint8_t(sponge_.offset_bits() / 8);
  out[26] = std::uint8_t(sponge_.phase());
  out[27] = std::uint8_t(config_.reseed.mode);
  store_le32(&out[28], counter_);
  store_le32(&out[32], config_.reseed.threshold_bytes);
  store_le32(&out[36], config_.reseed.max_reseed_duration_ms);
  store_le32(&out[40], std::uint32_t(pending_output_bits_));
  store_le32(&out[44], std::uint32_t(ledger_.total() / 1000));
  store_le32(&out[48], std::uint32_t(ledger_.starvations));
  return out;
}

}  // namespace uarmor::urng
