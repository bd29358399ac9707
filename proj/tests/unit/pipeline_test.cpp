#include <gtest/gtest.h>

#include <filesystem>

#include "corpus.hpp"
#include "uarmor/error.hpp"

using namespace uarmor;
using namespace uarmor::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("uarmor_pipeline_" + name)).string();
}

}  // namespace

TEST(Manifest, RoundTripRebuildsTheSameImageAndRun) {
  const std::string src = source_path("corpus/echo_server.s");
  auto cfg = BuildConfig::full(seed_of(41));
  cfg.policy = ssp::PolicyKind::ThreadRestart;
  auto first = build(fw::assemble_file(src), cfg);

  auto manifest = Manifest::describe(cfg, src, slurp(src), "builtin");
  auto reread = Manifest::parse(manifest.to_text());
  EXPECT_EQ(reread.fields, [&] {
    auto f = manifest.fields;
    f["manifest.hash"] = manifest.content_hash();
    return f;
  }());
  auto again = build(fw::assemble_file(reread.get("source")), reread.config());
  EXPECT_EQ(fw::serialize(first.image), fw::serialize(again.image));

  auto sim_cfg = config_for(first.image, corpus_input("echo_server"));
  sim::Machine a(first.image, sim_cfg), b(again.image, sim_cfg);
  a.boot();
  b.boot();
  a.run(5000000);
  b.run(5000000);
  EXPECT_EQ(a.event_log(), b.event_log());
  EXPECT_EQ(a.output(), b.output());
}

TEST(Manifest, EditedFieldBreaksTheHash) {
  auto m = Manifest::describe(BuildConfig{}, "x.s", "text", "builtin");
  std::string text = m.to_text();
  auto pos = text.find("policy = fatal");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 14, "policy = passive");
  EXPECT_THROW(Manifest::parse(text), Error);
}

TEST(Manifest, MissingFieldIsAnError) {
  auto m = Manifest::parse("ssp = default\n");
  EXPECT_THROW(m.config(), Error);
}

TEST(Manifest, MapMismatchIsDetected) {
  auto m = Manifest::describe(BuildConfig{}, "x.s", "text", "builtin");
  m.fields["map.hash"] = "00";
  EXPECT_THROW(m.config(), Error);
}

TEST(Image, FileRoundTrip) {
  auto image = build(corpus_module("crc32"), BuildConfig::full(seed_of(3))).image;
  const auto path = temp_path("crc32.img");
  fw::write_image_file(path, image);
  auto back = fw::read_image_file(path);
  std::filesystem::remove(path);
  EXPECT_EQ(fw::serialize(back), fw::serialize(image));
  EXPECT_EQ(back.symbol_table(), image.symbol_table());
}

TEST(Image, TruncatedFileIsRejected) {
  auto bytes = fw::serialize(build(corpus_module("gcd_lcm"), BuildConfig{}).image);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(fw::parse_image(bytes), Error);
}

TEST(Build, ConfigMatrixPreservesOutput) {
  const auto module = corpus_module("echo_server");
  const auto input = corpus_input("echo_server");
  auto plain = build(module, BuildConfig{}).image;
  const auto want = run_image(plain, config_for(plain, input));
  ASSERT_EQ(want.reason, sim::StopReason::Halted);
  for (auto ssp_mode : {ssp::SspMode::Off, ssp::SspMode::Default}) {
    for (bool esp_on : {false, true}) {
      for (std::uint64_t s = 0; s < 5; ++s) {
        BuildConfig c;
        c.ssp = ssp_mode;
        c.esp = esp_on;
        c.urng = ssp_mode != ssp::SspMode::Off;
        c.seed = seed_of(s);
        auto image = build(module, c).image;
        auto got = run_image(image, config_for(image, input));
        EXPECT_EQ(got.output, want.output) << to_string(ssp_mode) << " esp=" << esp_on << " seed=" << s;
        EXPECT_EQ(got.halt_code, want.halt_code);
      }
    }
  }
}

TEST(Build, SameSeedSameBytes) {
  const auto module = corpus_module("dispatch30");
  auto a = build(module, BuildConfig::full(seed_of(12))).image;
  auto b = build(module, BuildConfig::full(seed_of(12))).image;
  auto c = build(module, BuildConfig::full(seed_of(13))).image;
  EXPECT_EQ(fw::serialize(a), fw::serialize(b));
  EXPECT_NE(a.code, c.code);
}

TEST(Build, SspModeText) {
  for (auto m : {ssp::SspMode::Off, ssp::SspMode::Default, ssp::SspMode::All}) {
    EXPECT_EQ(parse_ssp_mode(to_string(m)), m);
  }
  EXPECT_FALSE(parse_ssp_mode("sometimes").has_value());
}

TEST(Build, EveryProgramBuildsUnderTheCanaryEspPolicyMatrix) {
  const auto programs = corpus_programs();
  ASSERT_EQ(programs.size(), 25u);
  for (const auto& name : programs) {
    const auto module = corpus_module(name);
    for (bool terminator : {false, true}) {
      for (bool esp_on : {false, true}) {
        for (auto policy : {ssp::PolicyKind::Passive, ssp::PolicyKind::Fatal, ssp::PolicyKind::ThreadRestart,
                            ssp::PolicyKind::SystemRestart, ssp::PolicyKind::Shutdown}) {
          BuildConfig c;
          c.ssp = ssp::SspMode::Default;
          c.urng = true;
          c.canary.terminator_style = terminator;
          c.esp = esp_on;
          c.policy = policy;
          EXPECT_NO_THROW(build(module, c)) << name;
        }
      }
    }
  }
}
