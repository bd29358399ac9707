#include <gtest/gtest.h>

#include <random>

#include "random_module.hpp"
#include "uarmor/assembler.hpp"
#include "uarmor/error.hpp"
#include "uarmor/image.hpp"
#include "uarmor/ussp.hpp"

using namespace uarmor::ssp;
using namespace uarmor::fw;

namespace {

FirmwareModule buffers_module() {
  return assemble(R"(
.entry main
.func main
  .local p pointer 4
  .local buf buffer 16
  .local n scalar 4
  enter {r4}
  movi r0, #0
  str r0, [sp, @buf+0]
  leave
.endfunc
.func small
  .local tiny buffer 4
  enter {}
  leave
.endfunc
.func twoexits
  .local b buffer 8
  enter {}
  cmp r0, r1
  beq out
  movi r0, #1
  leave
out:
  movi r0, #2
  leave
.endfunc
)");
}

struct RecordingHost : ViolationHost {
  std::vector<std::string> calls;
  void log_alert(int t, PolicyKind p, const ViolationInfo&, const std::string& note) override {
    calls.push_back("alert " + std::to_string(t) + " " + to_string(p) + " " + note);
  }
  void resume(int t, std::uint32_t pc) override { calls.push_back("resume " + std::to_string(t) + " " + std::to_string(pc)); }
  void kill_thread(int t) override { calls.push_back("kill " + std::to_string(t)); }
  void restart_thread(int t, std::uint32_t h) override {
    calls.push_back("restart " + std::to_string(t) + " " + std::to_string(h));
  }
  void cold_reboot() override { calls.push_back("reboot"); }
  void shutdown() override { calls.push_back("shutdown"); }
};

}  // namespace

TEST(FrameLayout, PointersBelowBuffers) {
  auto m = buffers_module();
  auto f = reorder_frame(*m.find("main"));
  EXPECT_LT(f.find_local("p")->offset, f.find_local("buf")->offset);
  EXPECT_LT(f.find_local("n")->offset, f.find_local("buf")->offset);
  EXPECT_EQ(f.find_local("buf")->offset + 16, std::int32_t(f.canary_offset()));
  EXPECT_EQ(f.frame_size(), m.find("main")->frame_size());
}

TEST(FrameLayout, NoBuffersUnchanged) {
  FunctionDef f;
  f.locals = {{"a", LocalKind::Scalar, 4, -1}, {"b", LocalKind::Pointer, 4, -1}};
  assign_default_frame(f);
  EXPECT_EQ(reorder_frame(f), f);
}

TEST(Instrument, AddsNineInstructionsAnd36Bytes) {
  auto m = buffers_module();
  for (const char* name : {"main", "small"}) {
    const auto* f = m.find(name);
    auto g = instrument_ssp(*f, {});
    EXPECT_EQ(g.instruction_count(), f->instruction_count() + 9) << name;
    EXPECT_TRUE(g.protected_by_ssp);
    EXPECT_EQ(g.frame_size(), f->frame_size() + 4);
  }
  auto base = m;
  ensure_global(base, kGuardSymbol, 4, true);
  ensure_violation_handler(base);
  auto prot = base;
  *prot.find("main") = instrument_ssp(*prot.find("main"), {});
  EXPECT_EQ(encode(prot).code.size(), encode(base).code.size() + 36);
}

TEST(Instrument, EveryExitIsChecked) {
  auto m = buffers_module();
  auto g = instrument_ssp(*m.find("twoexits"), {});
  EXPECT_EQ(g.instruction_count(), m.find("twoexits")->instruction_count() + 4 + 2 * 5);
}

TEST(Coverage, ThresholdRule) {
  auto m = buffers_module();
  CanaryConfig c;
  EXPECT_TRUE(needs_protection(*m.find("main"), c));
  EXPECT_FALSE(needs_protection(*m.find("small"), c));
  EXPECT_TRUE(needs_protection(*m.find("twoexits"), c));
  c.protect_all = true;
  EXPECT_TRUE(needs_protection(*m.find("small"), c));
  auto p = protect_module(m, SspMode::Default, {});
  EXPECT_FALSE(p.find("small")->protected_by_ssp);
  EXPECT_TRUE(p.find("main")->protected_by_ssp);
  EXPECT_NE(p.find(kViolationHandler), nullptr);
  EXPECT_NE(p.find_global(kGuardSymbol), nullptr);
  auto all = protect_module(m, SspMode::All, {});
  EXPECT_TRUE(all.find("small")->protected_by_ssp);
  auto off = protect_module(m, SspMode::Off, {});
  EXPECT_FALSE(off.find("main")->protected_by_ssp);
  EXPECT_NE(off.find_global(kGuardSymbol), nullptr);
}

TEST(Canary, TerminatorMask) {
  CanaryConfig term;
  term.terminator_style = true;
  auto c = generate_master_canary([] { return 0xAABBCCDDu; }, term, 3);
  EXPECT_EQ(c.value, 0xAABBCC00u);
  EXPECT_EQ(c.boot_id, 3u);
  EXPECT_EQ(term.entropy_bits(), 24u);
  auto plain = generate_master_canary([] { return 0xAABBCCDDu; }, CanaryConfig{}, 0);
  EXPECT_EQ(plain.value, 0xAABBCCDDu);
  EXPECT_EQ(CanaryConfig{}.entropy_bits(), 32u);
}

TEST(Canary, InBoundsWritesNeverTouchSlot) {
  std::mt19937_64 gen(8);
  int writes = 0;
  while (writes < 10000) {
    auto m = protect_module(uarmor::testing::random_module(gen), SspMode::All, {});
    for (const auto& f : m.functions) {
      if (!f.has_canary || f.locals.empty()) continue;
      const auto slot = f.canary_offset();
      for (int k = 0; k < 20; ++k, ++writes) {
        const auto& l = f.locals[gen() % f.locals.size()];
        std::uint32_t at = std::uint32_t(l.offset) + std::uint32_t(gen() % l.size);
        ASSERT_TRUE(at < slot || at >= slot + 4) << f.name << "." << l.name;
      }
    }
  }
}

TEST(Canary, OverflowCrossesCanaryBeforeMetadata) {
  std::mt19937_64 gen(10);
  for (int i = 0; i < 300; ++i) {
    auto m = protect_module(uarmor::testing::random_module(gen), SspMode::All, {});
    for (const auto& f : m.functions) {
      if (!f.has_canary) continue;
      EXPECT_EQ(f.canary_offset() + 4, f.frame_size());
      for (const auto& l : f.locals) {
        EXPECT_LE(std::uint32_t(l.offset) + l.size, f.canary_offset());
        if (l.kind != LocalKind::Buffer) continue;
        for (const auto& o : f.locals) {
          if (o.kind != LocalKind::Buffer) {
            EXPECT_LT(o.offset, l.offset);
          }
        }
      }
    }
  }
}

TEST(Policy, Effects) {
  ViolationInfo info{ViolationSource::Canary, 0x100, 0x104};
  {
    RecordingHost h;
    ViolationPolicy p(PolicyKind::Passive);
    EXPECT_EQ(handle_violation(h, p, 1, info), Effect::Resumed);
    EXPECT_EQ(h.calls, (std::vector<std::string>{"alert 1 passive resuming", "resume 1 260"}));
  }
  {
    RecordingHost h;
    ViolationPolicy p(PolicyKind::Fatal);
    EXPECT_EQ(handle_violation(h, p, 2, info), Effect::ThreadKilled);
    EXPECT_EQ(h.calls.back(), "kill 2");
  }
  {
    RecordingHost h;
    ViolationPolicy p(PolicyKind::ThreadRestart);
    p.register_handler(3, 0x400);
    EXPECT_EQ(handle_violation(h, p, 3, info), Effect::ThreadRestarted);
    EXPECT_EQ(h.calls.back(), "restart 3 1024");
    p.deregister(3);
    EXPECT_EQ(p.registered(), 0u);
  }
  {
    RecordingHost h;
    ViolationPolicy p(PolicyKind::ThreadRestart);
    EXPECT_EQ(handle_violation(h, p, 4, info), Effect::ThreadKilled);
    EXPECT_NE(h.calls.front().find("falling back to fatal"), std::string::npos);
    EXPECT_EQ(h.calls.back(), "kill 4");
  }
  {
    RecordingHost h;
    ViolationPolicy p(PolicyKind::SystemRestart);
    EXPECT_EQ(handle_violation(h, p, 0, info), Effect::Rebooted);
    EXPECT_EQ(h.calls.back(), "reboot");
  }
  {
    RecordingHost h;
    ViolationPolicy p(PolicyKind::Shutdown);
    EXPECT_EQ(handle_violation(h, p, 0, info), Effect::ShutDown);
    EXPECT_EQ(h.calls.back(), "shutdown");
  }
}

TEST(Policy, NamesRoundTrip) {
  for (auto k : {PolicyKind::Passive, PolicyKind::Fatal, PolicyKind::ThreadRestart, PolicyKind::SystemRestart,
                 PolicyKind::Shutdown}) {
    EXPECT_EQ(parse_policy(to_string(k)), k);
  }
  EXPECT_FALSE(parse_policy("reboot-everything"));
}
