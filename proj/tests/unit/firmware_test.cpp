#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "random_module.hpp"
#include "uarmor/assembler.hpp"
#include "uarmor/bytes.hpp"
#include "uarmor/callgraph.hpp"
#include "uarmor/error.hpp"
#include "uarmor/image.hpp"

using namespace uarmor::fw;
using uarmor::Error;
using uarmor::ErrorCode;

namespace {

std::vector<Instruction> flatten(const FunctionDef& f) {
  std::vector<Instruction> out;
  for (const auto& b : f.blocks) out.insert(out.end(), b.insns.begin(), b.insns.end());
  return out;
}

FirmwareModule three_function_module() {
  return assemble(R"(
.entry main
.func main
  call a
  call b
  halt #0
.endfunc
.func a
  movi r0, #1
  ret
.endfunc
.func b
  movi r0, #2
  movi r1, #3
  ret
.endfunc
)");
}

}  // namespace

TEST(Isa, EncodingsOfFixedWords) {
  EXPECT_EQ(encode(nop()), 0x00000000u);
  EXPECT_EQ(encode(ret()), 0x32000000u);
  EXPECT_EQ(encode(halt(7)), 0x7F000007u);
  EXPECT_EQ(encode(movi(3, 0xBEEF)), 0x1013BEEFu);
  EXPECT_EQ(encode(alui(AluOp::Sub, kSp, kSp, 16)), 0x111DD810u);
  Instruction b = br(Cond::Ne, {});
  b.imm = -2;
  EXPECT_EQ(encode(b), 0x332FFFFEu);
}

TEST(Isa, RegisterListOrderIsPreserved) {
  for (auto regs : std::vector<std::vector<Reg>>{{}, {4}, {5, 4}, {11, 4, 7, 6}, {4, 5, 6, 7, 8, 9, 10, 11}}) {
    auto d = decode(encode(pushm(regs, true)));
    ASSERT_TRUE(d);
    EXPECT_EQ(d->regs, regs);
    EXPECT_TRUE(d->with_lr);
  }
  std::vector<Reg> all = {4, 5, 6, 7, 8, 9, 10, 11};
  std::uint32_t rank = 0;
  do {
    ASSERT_EQ(order_rank(all), rank++);
  } while (std::next_permutation(all.begin(), all.end()));
}

TEST(Isa, DecodeEncodeIsIdentityOnValidWords) {
  std::mt19937_64 gen(11);
  int valid = 0;
  for (int i = 0; i < 200000; ++i) {
    std::uint32_t w = std::uint32_t(gen());
    if (i % 2) w = (w & 0x00FFFFFF) | std::uint32_t(std::vector<int>{0x10, 0x11, 0x12, 0x13, 0x20, 0x23, 0x30, 0x33}[i % 8]) << 24;
    auto d = decode(w);
    if (!d) continue;
    ++valid;
    ASSERT_EQ(encode(*d), w) << std::hex << w;
  }
  EXPECT_GT(valid, 1000);
}

TEST(Isa, RejectsOutOfRangeFields) {
  EXPECT_THROW(encode(alui(AluOp::Add, 0, 0, 4096)), Error);
  EXPECT_THROW(encode(pushm({3}, false)), Error);
  EXPECT_THROW(encode(pushm({4, 4}, false)), Error);
}

TEST(Assembler, ParsesDirectivesAndPseudoInstructions) {
  auto m = assemble(R"(
.entry main
.global counter 4
.string msg "hi\n"
.func main ssp
  .local buf buffer 16
  .local p pointer 4
  enter {r4, r5}
  li r4, #0x12345678
  adrd r0, counter
  str r4, [r0, #0]
  ldr r1, [sp, @buf+4]
loop:
  sub r4, r4, #1
  cmp r4, #0
  bne loop
  leave
.endfunc
)");
  ASSERT_EQ(m.functions.size(), 1u);
  const auto& f = m.functions[0];
  EXPECT_TRUE(f.force_ssp);
  EXPECT_EQ(f.blocks.size(), 2u);
  EXPECT_EQ(f.frame_size(), 20u);
  EXPECT_EQ(f.find_local("buf")->offset, 4);
  EXPECT_EQ(f.find_local("p")->offset, 0);
  auto insns = flatten(f);
  EXPECT_EQ(insns[0].op, Opcode::Pushm);
  EXPECT_EQ(insns[0].regs, (std::vector<Reg>{4, 5}));
  EXPECT_EQ(insns[2].imm, 0x5678);
  EXPECT_EQ(insns[3].imm, 0x1234);
  auto& popm_insn = insns[insns.size() - 2];
  EXPECT_EQ(popm_insn.op, Opcode::Popm);
  EXPECT_EQ(popm_insn.regs, (std::vector<Reg>{5, 4}));
  EXPECT_EQ(m.globals[1].init, (std::vector<std::uint8_t>{'h', 'i', '\n', 0}));
}

TEST(Assembler, ErrorsCarryLineNumbers) {
  try {
    assemble(".func main\n  nop\n  frobnicate r1\n.endfunc\n", "bad.s");
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("bad.s:3"), std::string::npos) << e.what();
  }
}

TEST(Assembler, PrivilegedInstructionsRequireSensitiveFunctions) {
  EXPECT_THROW(assemble(".func main\n  mpuwr r0\n  halt #0\n.endfunc\n"), Error);
  EXPECT_NO_THROW(assemble(".func main\n  halt #0\n.endfunc\n.func fw sensitive\n  flashwr r0, [r1]\n  ret\n.endfunc\n"));
}

TEST(Assembler, PrintedModuleReassemblesIdentically) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 200; ++i) {
    auto m = uarmor::testing::random_module(gen);
    auto again = assemble(print_module(m));
    ASSERT_EQ(again, m) << print_module(m);
  }
}

TEST(Encode, HaltOnlyModuleIsFourBytes) {
  auto m = assemble(".func main\n  halt #0\n.endfunc\n");
  auto img = encode(m);
  EXPECT_EQ(img.code.size(), 4u);
  EXPECT_EQ(img.entry, 0u);
  EXPECT_EQ(img.word_at(0), 0x7F000000u);
}

TEST(Encode, RoundTripsRandomModules) {
  std::mt19937_64 gen(17);
  for (int i = 0; i < 1000; ++i) {
    auto m = uarmor::testing::random_module(gen);
    LayoutOptions opts;
    opts.align_sensitive = i % 2 == 0;
    auto img = encode(m, opts);
    auto decoded = decode_image(img);
    ASSERT_EQ(decoded.size(), m.functions.size());
    for (const auto& df : decoded) {
      ASSERT_EQ(df.insns, resolved_instructions(m, df.name, opts)) << df.name;
    }
    auto bytes = serialize(img);
    ASSERT_EQ(parse_image(bytes), img);
    ASSERT_EQ(encode(m, opts), img);
  }
}

TEST(Encode, RangesAreDisjointAndCoverCodeWithPadding) {
  std::mt19937_64 gen(23);
  for (int i = 0; i < 300; ++i) {
    auto m = uarmor::testing::random_module(gen);
    LayoutOptions opts;
    opts.align_sensitive = true;
    auto img = encode(m, opts);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> ranges;
    for (const auto& s : img.symbols) {
      if (s.kind == SymbolKind::Function || s.kind == SymbolKind::Padding) ranges.push_back({s.start, s.end});
    }
    std::sort(ranges.begin(), ranges.end());
    std::uint32_t cursor = img.flash_base;
    for (auto [a, b] : ranges) {
      ASSERT_EQ(a, cursor);
      cursor = b;
    }
    ASSERT_EQ(cursor, img.code_end());
  }
}

TEST(Encode, SensitiveSectionIsPaddedToAnAlignedRegion) {
  EXPECT_EQ(padded_sensitive_size(4), 32u);
  EXPECT_EQ(padded_sensitive_size(100), 128u);
  EXPECT_EQ(padded_sensitive_size(300), 320u);  // 512-byte region, 64-byte sub-regions
  EXPECT_EQ(padded_sensitive_size(2048), 2048u);
}

TEST(Encode, FunctionOrderPermutesRangesButNotSize) {
  auto base = three_function_module();
  std::vector<int> idx = {0, 1, 2};
  std::size_t size = encode(base).code.size();
  std::set<std::vector<std::uint32_t>> starts;
  do {
    FirmwareModule m = base;
    m.functions = {base.functions[idx[0]], base.functions[idx[1]], base.functions[idx[2]]};
    auto img = encode(m);
    EXPECT_EQ(img.code.size(), size);
    auto r = img.function_ranges();
    starts.insert({r["main"].first, r["a"].first, r["b"].first});
    for (const auto& f : base.functions) {
      EXPECT_EQ(r[f.name].second - r[f.name].first, 4 * f.instruction_count());
    }
  } while (std::next_permutation(idx.begin(), idx.end()));
  EXPECT_EQ(starts.size(), 6u);
}

TEST(Encode, OverflowingFlashIsRejected) {
  auto m = three_function_module();
  LayoutOptions opts;
  opts.flash_size = 16;
  try {
    encode(m, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ImageOverflow);
  }
}

TEST(CallChain, SimpleShapes) {
  auto linear = assemble(R"(
.func main
  call a
  halt #0
.endfunc
.func a
  call b
  ret
.endfunc
.func b
  ret
.endfunc
)");
  auto r = longest_call_chain(linear);
  EXPECT_EQ(r.length, 3u);
  EXPECT_EQ(r.longest_chain, (std::vector<std::string>{"main", "a", "b"}));
  EXPECT_FALSE(r.has_recursion);
  EXPECT_EQ(stack_depth_estimate(linear, 4), 12u);

  auto fork = assemble(R"(
.func main
  call a
  call b
  halt #0
.endfunc
.func a
  call c
  ret
.endfunc
.func b
  ret
.endfunc
.func c
  ret
.endfunc
)");
  EXPECT_EQ(longest_call_chain(fork).longest_chain, (std::vector<std::string>{"main", "a", "c"}));

  auto rec = assemble(R"(
.func main
  call f
  halt #0
.endfunc
.func f
  call f
  ret
.endfunc
)");
  auto rr = longest_call_chain(rec);
  EXPECT_TRUE(rr.has_recursion);
  EXPECT_EQ(rr.length, 3u);
  EXPECT_EQ(longest_call_chain(rec, 3).length, 5u);
  EXPECT_EQ(longest_call_chain(CallGraph{}).length, 0u);
}

TEST(CallChain, IndirectCallsAreNotEdges) {
  auto m = assemble(R"(
.func main
  adrc r0, a
  callr r0
  halt #0
.endfunc
.func a
  ret
.endfunc
)");
  EXPECT_EQ(longest_call_chain(m).length, 1u);
}

TEST(CallChain, MatchesBruteForceEnumerationOnSmallGraphs) {
  std::mt19937_64 gen(41);
  for (int trial = 0; trial < 400; ++trial) {
    CallGraph g;
    int n = 1 + int(gen() % 8);
    for (int i = 0; i < n; ++i) g.nodes.push_back("n" + std::to_string(i));
    g.edges.resize(n);
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) {
        if (gen() % 5 == 0) g.edges[u].push_back(v);
      }
    }
    g.entry = 0;
    unsigned bound = 1 + unsigned(gen() % 2);

    // Oracle: enumerate every walk edge-by-edge with per-edge use counters.
    std::size_t best = 0;
    std::vector<std::vector<unsigned>> used(n, std::vector<unsigned>(n, 0));
    std::function<void(int, std::size_t)> enumerate = [&](int u, std::size_t len) {
      best = std::max(best, len);
      for (int v = 0; v < n; ++v) {
        bool edge = std::find(g.edges[u].begin(), g.edges[u].end(), v) != g.edges[u].end();
        if (!edge || used[u][v] >= bound) continue;
        ++used[u][v];
        enumerate(v, len + 1);
        --used[u][v];
      }
    };
    enumerate(0, 1);

    auto r = longest_call_chain(g, bound);
    ASSERT_EQ(r.length, best) << "trial " << trial;
    ASSERT_EQ(r.longest_chain.front(), "n0");
    for (std::size_t i = 1; i < r.longest_chain.size(); ++i) {
      int u = g.index_of(r.longest_chain[i - 1]);
      int v = g.index_of(r.longest_chain[i]);
      ASSERT_NE(std::find(g.edges[u].begin(), g.edges[u].end(), v), g.edges[u].end());
    }
  }
}

TEST(CallChain, ImageAndModuleGraphsAgree) {
  std::mt19937_64 gen(8);
  for (int i = 0; i < 100; ++i) {
    auto m = uarmor::testing::random_module(gen);
    auto img = encode(m);
    EXPECT_EQ(longest_call_chain(CallGraph::from_image(img)).length, longest_call_chain(m).length);
  }
}
