#include <gtest/gtest.h>

#include <bitset>
#include <cmath>
#include <map>

#include "stats.hpp"
#include "uarmor/error.hpp"
#include "uarmor/urng.hpp"

using namespace uarmor::urng;
using uarmor::Error;
using uarmor::ErrorCode;

namespace {

int hamming(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::bitset<8>(a[i] ^ b[i]).count();
  return d;
}

RngState seeded(std::uint64_t device_seed, RngConfig config = {}, std::uint64_t sim_seed = 1) {
  EntropyModel model;
  auto dev = SramDevice::manufacture(device_seed, 4096);
  auto suv = dev.sample(7);
  return rng_init(config, suv, model, EntropySources::defaults(model, sim_seed));
}

}  // namespace

TEST(Sram, FullyBiasedCellsReadOnes) {
  auto dev = SramDevice::from_biases(std::vector<double>(64 * 8, 1.0), 0.0);
  for (auto b : dev.sample(3)) EXPECT_EQ(b, 0xFF);
}

TEST(Sram, SameBootSeedSameBytes) {
  auto dev = SramDevice::manufacture(9, 1024, 0.05, 0.01);
  EXPECT_EQ(dev.sample(4), dev.sample(4));
  EXPECT_NE(dev.sample(4), dev.sample(5));
  EXPECT_EQ(sram_startup_sample(dev, 4), dev.sample(4));
}

TEST(Sram, BootToBootDistanceMatchesModel) {
  const double noise = 0.01;
  auto dev = SramDevice::manufacture(21, 1024, 0.05, noise);
  double mean = 0, var = 0;
  for (std::size_t bit = 0; bit < 1024 * 8; ++bit) {
    double p = dev.bias(bit);
    double q = p * (1 - noise) + (1 - p) * noise;
    double d = 2 * q * (1 - q);
    mean += d;
    var += d * (1 - d);
  }
  const int pairs = 500;
  double observed = 0;
  for (int i = 0; i < pairs; ++i) observed += hamming(dev.sample(2 * i), dev.sample(2 * i + 1));
  observed /= pairs;
  EXPECT_NEAR(observed, mean, 3 * std::sqrt(var / pairs));
}

TEST(RngInit, SeedBoundaryAt640Bytes) {
  EntropyModel model;
  EXPECT_EQ(min_suv_bytes(model, 256), 640u);
  EXPECT_EQ(model.seed_credit(640), 256000u);
  std::vector<std::uint8_t> suv(640, 0x5A);
  EXPECT_NO_THROW(rng_init({}, suv, model));
  suv.resize(639);
  try {
    rng_init({}, suv, model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSeedEntropy);
  }
}

TEST(RngInit, RejectsWeakConfig) {
  RngConfig c;
  c.seed_min_entropy_bits = 200;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.reseed.threshold_bytes = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(RngInit, DistinctDevicesDistinctOutputs) {
  EntropyModel model;
  for (int i = 0; i < 100; ++i) {
    auto a = SramDevice::manufacture(1000 + 2 * i, 1024).sample(42);
    auto b = SramDevice::manufacture(1001 + 2 * i, 1024).sample(42);
    auto ra = rng_init({}, a, model);
    auto rb = rng_init({}, b, model);
    EXPECT_NE(ra.rand32(), rb.rand32());
  }
}

TEST(Rand32, FoldDefinition) {
  EXPECT_EQ(fold64(0x0123456789ABCDEFull), 0x88888888u);
  auto a = seeded(3);
  auto b = seeded(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.rand32(), b.rand32());
}

TEST(Reseed, ConsistentCreditsPerBlock) {
  auto rng = seeded(4);
  rng.rand32();
  EXPECT_GE(rng.ledger().reseed_credit, 1000u);
  EXPECT_EQ(rng.ledger().output_bytes, 8u);
}

TEST(Reseed, ConsistentFullReseedEvery2K) {
  auto rng = seeded(5);
  while (rng.ledger().output_bytes < 2048) rng.rand32();
  EXPECT_EQ(rng.ledger().output_bytes, 2048u);
  EXPECT_GE(rng.ledger().reseed_credit, 256000u);
  EXPECT_EQ(rng.ledger().starvations, 0u);
}

TEST(Reseed, PeriodicThreshold) {
  RngConfig c;
  c.reseed.mode = ReseedMode::Periodic;
  c.reseed.threshold_bytes = 1u << 30;
  auto rng = seeded(6, c);
  rng.set_reseed_counter(c.reseed.threshold_bytes - 16);
  rng.rand32();
  EXPECT_EQ(rng.reseed_counter(), c.reseed.threshold_bytes - 8);
  EXPECT_TRUE(rng.reseed_events().empty());
  rng.rand32();
  EXPECT_EQ(rng.reseed_counter(), 0u);
  ASSERT_EQ(rng.reseed_events().size(), 1u);
  EXPECT_FALSE(rng.reseed_events()[0].starved);
  EXPECT_EQ(rng.reseed_events()[0].credited, 256000u);
}

TEST(Reseed, PeriodicStarvesWhenBudgetTooShort) {
  RngConfig c;
  c.reseed.mode = ReseedMode::Periodic;
  c.reseed.threshold_bytes = 64;
  c.reseed.max_reseed_duration_ms = 10;
  auto rng = seeded(7, c);
  for (int i = 0; i < 8; ++i) rng.rand32();
  ASSERT_EQ(rng.reseed_events().size(), 1u);
  EXPECT_TRUE(rng.reseed_events()[0].starved);
  EXPECT_EQ(rng.reseed_events()[0].credited, 200000u);
  EXPECT_EQ(rng.ledger().starvations, 1u);
  EXPECT_EQ(rng.reseed_counter(), 0u);
}

TEST(Jitter, ZeroDeviationIsConstantAndUncredited) {
  ClockModel m;
  m.jitter_stddev_ps = 0;
  JitterSource src(m, 0.5);
  auto bytes = src.sample(100);
  for (auto b : bytes) EXPECT_EQ(b, bytes[0]);
  EXPECT_EQ(src.credit_per_sample(), 0u);
}

TEST(Jitter, Reproducible) {
  ClockModel m;
  m.sim_seed = 77;
  EXPECT_EQ(jitter_sample(m, 256), jitter_sample(m, 256));
  m.sim_seed = 78;
  EXPECT_NE(jitter_sample(ClockModel{}, 256), jitter_sample(m, 256));
}

TEST(Jitter, CollisionEstimateIsPositive) {
  ClockModel m;
  auto bytes = jitter_sample(m, 1000000);
  std::map<std::uint8_t, double> freq;
  for (auto b : bytes) freq[b] += 1;
  double collision = 0;
  for (auto& [v, c] : freq) collision += (c / 1e6) * (c / 1e6);
  double h2 = -std::log2(collision);
  // Min-entropy is at least half the collision entropy.
  EXPECT_GT(h2 / 2, 0.5);
}

TEST(RngState, ControlBlockIs52Bytes) {
  auto rng = seeded(8);
  rng.rand32();
  auto block = rng.serialize();
  EXPECT_EQ(block.size(), 52u);
  EXPECT_TRUE(std::equal(block.begin(), block.begin() + 25, rng.sponge().lanes().begin()));
  EXPECT_EQ(block[28], 8);
}

TEST(RngState, OutputPassesSmokeTests) {
  auto rng = seeded(9);
  std::vector<std::uint8_t> out;
  out.reserve(1 << 20);
  while (out.size() < (1u << 20)) {
    auto v = rng.rand32();
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
  }
  EXPECT_GE(uarmor::testing::monobit_p(out), 0.01);
  EXPECT_GE(uarmor::testing::runs_p(out), 0.01);
}
