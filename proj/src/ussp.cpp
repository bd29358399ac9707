#include "uarmor/ussp.hpp"

#include <algorithm>

#include "uarmor/error.hpp"
#include "uarmor/urng.hpp"

namespace uarmor::ssp {

using namespace uarmor::fw;

MasterCanary generate_master_canary(urng::RngState& rng, const CanaryConfig& config, std::uint64_t boot_id) {
  return {apply_canary_style(rng.rand32(), config), boot_id};
}

MasterCanary generate_master_canary(const std::function<std::uint32_t()>& rand32, const CanaryConfig& config,
                                    std::uint64_t boot_id) {
  return {apply_canary_style(rand32(), config), boot_id};
}

FunctionDef reorder_frame(FunctionDef fn) {
  std::vector<LocalVar*> low, buffers;
  for (auto& l : fn.locals) (l.kind == LocalKind::Buffer ? buffers : low).push_back(&l);
  if (buffers.empty()) return fn;
  std::int32_t cursor = 0;
  for (auto* l : low) {
    l->offset = cursor;
    cursor += std::int32_t(align4(l->size));
  }
  for (auto* l : buffers) {
    l->offset = cursor;
    cursor += std::int32_t(align4(l->size));
  }
  return fn;
}

bool needs_protection(const FunctionDef& fn, const CanaryConfig& config) {
  if (config.protect_all || fn.force_ssp) return true;
  return std::any_of(fn.locals.begin(), fn.locals.end(), [&](const LocalVar& l) {
    return l.kind == LocalKind::Buffer && l.size >= config.protect_threshold_buffer_bytes;
  });
}

namespace {

bool is_frame_adjust(const Instruction& in, AluOp op) {
  return in.op == Opcode::Alu && AluOp(in.sub) == op && in.imm_form && in.rd == kSp && in.rn == kSp &&
         in.sym.kind == SymRef::Kind::FrameSize;
}

SymRef guard() { return {SymRef::Kind::Global, std::string(kGuardSymbol), 0}; }
SymRef canary_slot() { return {SymRef::Kind::CanarySlot, "", 0}; }

}  // namespace

FunctionDef instrument_ssp(FunctionDef fn, const CanaryConfig&) {
  if (fn.has_canary) return fn;
  auto& entry = fn.blocks.front().insns;
  std::size_t alloc = 0;
  while (alloc < entry.size() && !is_frame_adjust(entry[alloc], AluOp::Sub)) ++alloc;
  if (alloc == entry.size() || alloc > 1) {
    throw Error(ErrorCode::NonCanonicalPrologue, fn.name + " has no frame allocation to protect");
  }
  // Without a frame release there is no return to check, so a canary would only cost space.
  const bool returns = std::any_of(fn.blocks.begin(), fn.blocks.end(), [](const BasicBlock& b) {
    return std::any_of(b.insns.begin(), b.insns.end(), [](const Instruction& in) { return is_frame_adjust(in, AluOp::Add); });
  });
  if (!returns) return fn;
  const std::vector<Instruction> prologue = {
      adrd(kScratch, guard()),
      load(kScratch, kScratch, 0),
      store(kScratch, kSp, 0, false, canary_slot()),
      movi(kScratch, 0),
  };
  entry.insert(entry.begin() + std::ptrdiff_t(alloc + 1), prologue.begin(), prologue.end());

  const std::vector<Instruction> epilogue = {
      adrd(kScratch, guard()),
      load(kScratch, kScratch, 0),
      load(3, kSp, 0, false, canary_slot()),
      alu(AluOp::Cmp, 0, kScratch, 3),
      br(Cond::Ne, {SymRef::Kind::Function, std::string(kViolationHandler), 0}),
  };
  for (auto& b : fn.blocks) {
    for (std::size_t i = 0; i < b.insns.size(); ++i) {
      if (is_frame_adjust(b.insns[i], AluOp::Add)) {
        b.insns.insert(b.insns.begin() + std::ptrdiff_t(i), epilogue.begin(), epilogue.end());
        i += epilogue.size();
      }
    }
  }
  fn.has_canary = true;
  fn.protected_by_ssp = true;
  return fn;
}

FirmwareModule protect_module(FirmwareModule m, SspMode mode, const CanaryConfig& config,
                              std::vector<std::string>* warnings) {
  if (mode == SspMode::Off) {
    ensure_global(m, kGuardSymbol, 4, true);
    return m;
  }
  CanaryConfig effective = config;
  effective.protect_all = config.protect_all || mode == SspMode::All;
  bool any = false;
  for (auto& f : m.functions) {
    if (!needs_protection(f, effective)) continue;
    try {
      FunctionDef reordered = reorder_frame(f);
      FunctionDef instrumented = instrument_ssp(std::move(reordered), effective);
      if (!instrumented.protected_by_ssp) {
        if (warnings) warnings->push_back(f.name + " never releases its frame; left without a canary");
        continue;
      }
      f = std::move(instrumented);
      any = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonCanonicalPrologue) throw;
      if (warnings) warnings->push_back(e.what());
    }
  }
  ensure_global(m, kGuardSymbol, 4, true);
  if (any) ensure_violation_handler(m);
  return m;
}

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Passive: return "passive";
    case PolicyKind::Fatal: return "fatal";
    case PolicyKind::ThreadRestart: return "thread-restart";
    case PolicyKind::SystemRestart: return "restart";
    case PolicyKind::Shutdown: return "shutdown";
  }
  return "?";
}

std::optional<PolicyKind> parse_policy(const std::string& text) {
  for (auto k : {PolicyKind::Passive, PolicyKind::Fatal, PolicyKind::ThreadRestart, PolicyKind::SystemRestart,
                 PolicyKind::Shutdown}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

void ViolationPolicy::register_handler(int thread_id, std::uint32_t handler_addr) {
  handlers_[thread_id] = handler_addr;
}

void ViolationPolicy::deregister(int thread_id) { handlers_.erase(thread_id); }

std::optional<std::uint32_t> ViolationPolicy::handler_for(int thread_id) const {
  auto it = handlers_.find(thread_id);
  if (it == handlers_.end()) return std::nullopt;
  return it->second;
}

Effect handle_violation(ViolationHost& host, ViolationPolicy& policy, int thread, const ViolationInfo& info) {
  switch (policy.kind()) {
    case PolicyKind::Passive:
      host.log_alert(thread, policy.kind(), info, "resuming");
      host.resume(thread, info.resume_pc);
      return Effect::Resumed;
    case PolicyKind::Fatal:
      host.log_alert(thread, policy.kind(), info, "terminating thread");
      host.kill_thread(thread);
      return Effect::ThreadKilled;
    case PolicyKind::ThreadRestart: {
      auto handler = policy.handler_for(thread);
      if (!handler) {
        host.log_alert(thread, policy.kind(), info, "no restart handler registered; falling back to fatal");
        host.kill_thread(thread);
        return Effect::ThreadKilled;
      }
      host.log_alert(thread, policy.kind(), info, "restarting thread");
      host.restart_thread(thread, *handler);
      return Effect::ThreadRestarted;
    }
    case PolicyKind::SystemRestart:
      host.log_alert(thread, policy.kind(), info, "cold reboot");
      host.cold_reboot();
      return Effect::Rebooted;
    case PolicyKind::Shutdown:
      host.log_alert(thread, policy.kind(), info, "shutting down");
      host.shutdown();
      return Effect::ShutDown;
  }
  return Effect::ShutDown;
}

}  // namespace uarmor::ssp
