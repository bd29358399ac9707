#include "uarmor/uscramble.hpp"

#include <algorithm>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"
#include "uarmor/urng.hpp"

namespace uarmor::scramble {

std::optional<DiversificationSeed> DiversificationSeed::from_hex(std::string_view hex) {
  if (hex.size() != 64) return std::nullopt;
  auto bytes = uarmor::from_hex(hex);
  if (!bytes) return std::nullopt;
  DiversificationSeed s;
  std::copy(bytes->begin(), bytes->end(), s.bytes.begin());
  return s;
}

std::string DiversificationSeed::hex() const { return to_hex(bytes); }

SeedStream::SeedStream(const DiversificationSeed& seed, std::string_view tag) {
  sponge_.absorb(seed.bytes);
  sponge_.absorb({reinterpret_cast<const std::uint8_t*>(tag.data()), tag.size()});
}

SeedStream::SeedStream(const DiversificationSeed& seed, std::string_view tag, std::uint32_t index)
    : SeedStream(seed, tag) {
  std::uint8_t idx[4];
  store_le32(idx, index);
  sponge_.absorb(idx);
}

std::uint32_t SeedStream::next32() {
  std::uint8_t block[8];
  sponge_.squeeze(block);
  return urng::fold64(std::uint64_t(load_le32(block)) | std::uint64_t(load_le32(block + 4)) << 32);
}

std::uint32_t SeedStream::uniform(std::uint32_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t range = std::uint64_t(1) << 32;
  const std::uint64_t limit = range - range % bound;
  for (;;) {
    std::uint64_t x = next32();
    if (x < limit) return std::uint32_t(x % bound);
  }
}

fw::FunctionDef reorder_register_preservation(fw::FunctionDef fn, SeedStream& stream) {
  using fw::Opcode;
  auto& entry = fn.blocks.front().insns;
  if (entry.empty() || entry.front().op != Opcode::Pushm) {
    throw Error(ErrorCode::NonCanonicalPrologue, fn.name + " does not start with a register save");
  }
  auto saved = entry.front().regs;
  auto sorted_saved = saved;
  std::sort(sorted_saved.begin(), sorted_saved.end());

  std::vector<fw::Instruction*> restores;
  for (auto& b : fn.blocks) {
    for (std::size_t i = 0; i < b.insns.size(); ++i) {
      if (b.insns[i].op != Opcode::Ret) continue;
      if (i == 0 || b.insns[i - 1].op != Opcode::Popm) {
        throw Error(ErrorCode::NonCanonicalPrologue, fn.name + " has a return without a register restore");
      }
      auto regs = b.insns[i - 1].regs;
      std::sort(regs.begin(), regs.end());
      if (regs != sorted_saved) {
        throw Error(ErrorCode::NonCanonicalPrologue, fn.name + " restores a different register set");
      }
      restores.push_back(&b.insns[i - 1]);
    }
  }

  shuffle(stream, saved);
  entry.front().regs = saved;
  for (auto* r : restores) r->regs.assign(saved.rbegin(), saved.rend());
  return fn;
}

fw::FunctionDef insert_dead_code(fw::FunctionDef fn, const DiversifyConfig& config, SeedStream& stream) {
  std::uint32_t k = stream.uniform(config.max_stub_instructions + 1);
  if (k == 0) return fn;
  fw::BasicBlock stub{std::string(kStubLabel), {}};
  for (std::uint32_t i = 0; i < k; ++i) {
    if (config.dead_code_kind == StubKind::Nop) {
      stub.insns.push_back(fw::nop());
    } else {
      stub.insns.push_back(fw::br(fw::Cond::Al, {fw::SymRef::Kind::Function, std::string(fw::kViolationHandler), 0}));
    }
  }
  fn.blocks.push_back(std::move(stub));
  return fn;
}

fw::FirmwareModule reorder_functions(fw::FirmwareModule m, SeedStream& stream) {
  shuffle(stream, m.functions);
  return m;
}

fw::FirmwareModule diversify(fw::FirmwareModule m, const DiversificationSeed& seed, const DiversifyConfig& config,
                             std::vector<std::string>* warnings) {
  if (config.enable_reg_reorder) {
    for (std::size_t i = 0; i < m.functions.size(); ++i) {
      SeedStream stream(seed, "REG", std::uint32_t(i));
      try {
        m.functions[i] = reorder_register_preservation(m.functions[i], stream);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonCanonicalPrologue) throw;
        if (warnings) warnings->push_back(e.what());
      }
    }
  }
  if (config.enable_dead_code && config.max_stub_instructions > 0) {
    if (config.dead_code_kind == StubKind::Trap) fw::ensure_violation_handler(m);
    for (std::size_t i = 0; i < m.functions.size(); ++i) {
      SeedStream stream(seed, "DEAD", std::uint32_t(i));
      m.functions[i] = insert_dead_code(std::move(m.functions[i]), config, stream);
    }
  }
  if (config.enable_func_reorder) {
    SeedStream stream(seed, "FUNC");
    m = reorder_functions(std::move(m), stream);
  }
  return m;
}

DiversificationSeed derive_variant_seed(const DiversificationSeed& base, std::uint32_t index) {
  keccak::Sponge s;
  s.absorb(base.bytes);
  std::uint8_t idx[4];
  store_le32(idx, index);
  s.absorb(idx);
  DiversificationSeed out;
  s.squeeze(out.bytes);
  return out;
}

}  // namespace uarmor::scramble
