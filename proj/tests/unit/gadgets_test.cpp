#include <gtest/gtest.h>

#include <random>
#include <set>

#include "corpus.hpp"
#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"
#include "uarmor/gadgets.hpp"
#include "uarmor/isa.hpp"

using namespace uarmor;
using namespace uarmor::testing;
using gadgets::Gadget;

namespace {

constexpr std::uint32_t kBase = 0x00000000;

fw::FlatImage image_of_words(const std::vector<std::uint32_t>& words) {
  fw::FlatImage img;
  img.flash_base = kBase;
  img.code.resize(words.size() * 4);
  for (std::size_t i = 0; i < words.size(); ++i) store_le32(&img.code[4 * i], words[i]);
  return img;
}

std::uint32_t w(const fw::Instruction& insn) { return fw::encode(insn); }

bool is_gadget_end(std::uint32_t word) {
  auto d = fw::decode(word);
  return d && (d->op == fw::Opcode::Ret || d->op == fw::Opcode::Callr);
}

// Brute force: try every start and every length.
std::set<Gadget> oracle_harvest(const fw::FlatImage& img, unsigned depth) {
  std::set<Gadget> out;
  const std::size_t n = img.code.size() / 4;
  for (std::size_t start = 0; start < n; ++start) {
    for (std::size_t len = 1; len <= depth && start + len <= n; ++len) {
      bool ok = true;
      for (std::size_t i = start; i < start + len; ++i) ok &= fw::decode(load_le32(&img.code[4 * i])).has_value();
      if (!ok || !is_gadget_end(load_le32(&img.code[4 * (start + len - 1)]))) continue;
      Gadget g;
      g.address = img.flash_base + std::uint32_t(4 * start);
      g.bytes.assign(img.code.begin() + std::ptrdiff_t(4 * start), img.code.begin() + std::ptrdiff_t(4 * (start + len)));
      out.insert(g);
    }
  }
  return out;
}

bool bytes_at(const fw::FlatImage& img, const Gadget& g) {
  const std::uint32_t off = g.address - img.flash_base;
  if (g.address < img.flash_base || off + g.bytes.size() > img.code.size()) return false;
  return std::equal(g.bytes.begin(), g.bytes.end(), img.code.begin() + off);
}

// Random words drawn from a small pool so that gadgets recur across images.
fw::FlatImage random_image(std::mt19937& rng, std::size_t max_words) {
  const std::vector<std::uint32_t> pool = {
      w(fw::nop()), w(fw::ret()), w(fw::callr(fw::Reg(3))), w(fw::mov(fw::Reg(0), fw::Reg(1))),
      w(fw::movi(fw::Reg(2), 7)), w(fw::popm({fw::Reg(4)}, true)), 0xFFFFFFFFu, 0xDEADBEEFu};
  std::uniform_int_distribution<std::size_t> len(1, max_words), pick(0, pool.size() - 1);
  std::vector<std::uint32_t> words(len(rng));
  for (auto& x : words) x = pool[pick(rng)];
  return image_of_words(words);
}

}  // namespace

TEST(Harvest, NopRet) {
  auto img = image_of_words({w(fw::nop()), w(fw::ret())});
  auto g = gadgets::harvest(img, 5);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].address, kBase);
  EXPECT_EQ(g[0].length(), 2u);
  EXPECT_EQ(g[1].address, kBase + 4);
  EXPECT_EQ(g[1].length(), 1u);
}

TEST(Harvest, NoReturnMeansNoGadgets) {
  auto img = image_of_words({w(fw::nop()), w(fw::movi(fw::Reg(0), 1)), w(fw::halt(0))});
  EXPECT_TRUE(gadgets::harvest(img, 5).empty());
}

TEST(Harvest, UndecodableWordCutsTheWindow) {
  auto img = image_of_words({w(fw::nop()), 0xFFFFFFFFu, w(fw::nop()), w(fw::ret())});
  ASSERT_FALSE(fw::decode(0xFFFFFFFFu).has_value());
  auto g = gadgets::harvest(img, 5);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].address, kBase + 8);
}

TEST(Harvest, DepthBoundsTheWindow) {
  std::vector<std::uint32_t> words(10, w(fw::nop()));
  words.push_back(w(fw::ret()));
  EXPECT_EQ(gadgets::harvest(image_of_words(words), 3).size(), 3u);
  EXPECT_EQ(gadgets::harvest(image_of_words(words), 20).size(), 11u);
}

TEST(Harvest, MatchesBruteForceOnRandomImages) {
  std::mt19937 rng(20261017);
  for (int trial = 0; trial < 300; ++trial) {
    auto img = random_image(rng, 256);
    const unsigned depth = 1 + unsigned(trial % 6);
    auto got = gadgets::harvest(img, depth);
    auto want = oracle_harvest(img, depth);
    ASSERT_TRUE(std::is_sorted(got.begin(), got.end()));
    ASSERT_EQ(std::set<Gadget>(got.begin(), got.end()), want) << "trial " << trial;
    ASSERT_EQ(got.size(), want.size());
  }
}

TEST(Survival, MatchesPairwiseOracle) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<fw::FlatImage> v;
    const int n = 2 + trial % 5;
    for (int i = 0; i < n; ++i) v.push_back(random_image(rng, 64));
    auto r = gadgets::survival(v, 4);
    double total = 0;
    std::uint64_t count = 0;
    std::uint32_t mx = 0;
    for (int i = 0; i < n; ++i) {
      for (const auto& g : oracle_harvest(v[std::size_t(i)], 4)) {
        std::uint32_t others = 0;
        for (int j = 0; j < n; ++j) others += j != i && bytes_at(v[std::size_t(j)], g);
        total += others;
        mx = std::max(mx, others);
        ++count;
      }
    }
    ASSERT_EQ(r.harvested, count);
    ASSERT_EQ(r.max_survival, mx);
    ASSERT_DOUBLE_EQ(r.avg_survival, count ? total / double(count) : 0.0);
  }
}

TEST(Survival, IdenticalVariantsSurviveEverywhere) {
  auto img = build(corpus_module("factorial"), BuildConfig{}).image;
  auto r = gadgets::survival({img, img, img, img});
  EXPECT_GT(r.harvested, 0u);
  EXPECT_DOUBLE_EQ(r.avg_fraction(), 1.0);
  EXPECT_DOUBLE_EQ(r.max_fraction(), 1.0);
  EXPECT_EQ(r.max_survival, 3u);
}

TEST(Survival, DisjointVariantsShareNothing) {
  auto a = image_of_words({w(fw::nop()), w(fw::ret())});
  auto b = image_of_words({w(fw::movi(fw::Reg(1), 2)), w(fw::callr(fw::Reg(0)))});
  auto r = gadgets::survival({a, b});
  EXPECT_EQ(r.max_survival, 0u);
  EXPECT_DOUBLE_EQ(r.avg_survival, 0.0);
}

TEST(Survival, SameBytesAtAnotherAddressDoNotCount) {
  auto a = image_of_words({w(fw::nop()), w(fw::ret())});
  auto b = image_of_words({w(fw::halt(0)), w(fw::nop()), w(fw::ret())});
  EXPECT_EQ(gadgets::survival({a, b}).max_survival, 0u);
}

TEST(Survival, VariantOrderDoesNotMatter) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<fw::FlatImage> v;
    for (int i = 0; i < 4; ++i) v.push_back(random_image(rng, 48));
    auto r1 = gadgets::survival(v);
    std::shuffle(v.begin(), v.end(), rng);
    auto r2 = gadgets::survival(v);
    EXPECT_EQ(r1.max_survival, r2.max_survival);
    EXPECT_DOUBLE_EQ(r1.avg_survival, r2.avg_survival);
    EXPECT_EQ(r1.holders, r2.holders);
  }
}

TEST(Survival, AddingACopyNeverLowersTheMaximum) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<fw::FlatImage> v;
    for (int i = 0; i < 3; ++i) v.push_back(random_image(rng, 48));
    auto before = gadgets::survival(v);
    v.push_back(v[std::size_t(trial % 3)]);
    auto after = gadgets::survival(v);
    EXPECT_GE(after.max_survival, before.max_survival);
    EXPECT_GE(after.max_survival, 1u);
  }
}

TEST(Survival, NeedsTwoVariants) {
  EXPECT_THROW(gadgets::survival({image_of_words({w(fw::ret())})}), Error);
}

TEST(Survival, DiversifiedVariantsShareFewGadgets) {
  std::vector<fw::FlatImage> v;
  auto module = corpus_module("dispatch30");
  for (std::uint64_t s = 0; s < 20; ++s) {
    BuildConfig c;
    c.seed = seed_of(s);
    v.push_back(build(module, c).image);
  }
  auto r = gadgets::survival(v);
  EXPECT_LT(r.avg_fraction(), 0.25);
  EXPECT_LT(r.avg_survival, double(r.max_survival));
}

TEST(SurvivalTable, Layout) {
  gadgets::SurvivalReport r;
  r.n_variants = 201;
  r.avg_survival = 3.5;
  r.max_survival = 20;
  auto t = gadgets::format_survival_table({{"dispatch30", r}});
  EXPECT_EQ(t,
            "Set        | Avg. GS              | Max. GS\n"
            "dispatch30 | 3.50 (1.75%)         | 20 (10.00%)\n");
}
