#include "uarmor/sim.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "uarmor/bytes.hpp"
#include "uarmor/callgraph.hpp"
#include "uarmor/error.hpp"

namespace uarmor::sim {

using fw::Opcode;

std::string to_string(AccessKind k) {
  switch (k) {
    case AccessKind::Fetch: return "fetch";
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
  }
  return "?";
}

namespace {

constexpr const char* kEventNames[] = {
    "Boot",         "Lock",         "ThreadStart", "ThreadExit",      "MemFault",        "BusFault",
    "UsageFault",   "CanaryViolation", "TrapViolation", "Alert",      "ThreadKilled",    "ThreadRestarted",
    "Reboot",       "Shutdown",     "Halt",        "ReseedStarvation",
};

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::uppercase;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

bool cond_holds(fw::Cond c, const Thread& t) {
  switch (c) {
    case fw::Cond::Al: return true;
    case fw::Cond::Eq: return t.flag_z;
    case fw::Cond::Ne: return !t.flag_z;
    case fw::Cond::Lt: return t.flag_n != t.flag_v;
    case fw::Cond::Ge: return t.flag_n == t.flag_v;
    case fw::Cond::Gt: return !t.flag_z && t.flag_n == t.flag_v;
    case fw::Cond::Le: return t.flag_z || t.flag_n != t.flag_v;
    case fw::Cond::Lo: return !t.flag_c;
    case fw::Cond::Hs: return t.flag_c;
    case fw::Cond::Hi: return t.flag_c && !t.flag_z;
    case fw::Cond::Ls: return !t.flag_c || t.flag_z;
  }
  return false;
}

bool inside(std::uint32_t addr, std::uint32_t size, const esp::AddrRange& r) {
  return addr >= r.base && std::uint64_t(addr) + size <= r.end();
}

}  // namespace

std::string to_string(EventKind k) { return kEventNames[int(k)]; }

std::optional<EventKind> parse_event_kind(const std::string& text) {
  for (int i = 0; i <= int(EventKind::ReseedStarvation); ++i) {
    if (text == kEventNames[i]) return EventKind(i);
  }
  return std::nullopt;
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::Halted: return "halted";
    case StopReason::AllThreadsDead: return "all-threads-dead";
    case StopReason::CycleLimit: return "cycle-limit";
    case StopReason::ShutDown: return "shutdown";
    case StopReason::BootFailed: return "boot-failed";
  }
  return "?";
}

std::string Event::to_string() const {
  std::ostringstream os;
  os << "boot=" << boot_id << " cycle=" << cycle << " thread=" << thread << " " << sim::to_string(kind)
     << " pc=" << hex32(pc);
  switch (kind) {
    case EventKind::MemFault:
    case EventKind::BusFault:
      os << " access=" << sim::to_string(access) << " addr=" << hex32(addr);
      break;
    case EventKind::Halt:
      os << " code=" << code;
      break;
    default:
      break;
  }
  if (!detail.empty()) os << " " << detail;
  return os.str();
}

std::uint32_t instruction_cost(const fw::Instruction& in, bool taken, const CycleCosts& c) {
  switch (in.op) {
    case Opcode::Nop:
    case Opcode::Mov:
    case Opcode::Alu: return c.alu;
    case Opcode::Load:
    case Opcode::Store: return c.mem;
    case Opcode::Pushm:
    case Opcode::Popm: return c.stack_per_reg * std::uint32_t(in.regs.size() + (in.with_lr ? 1 : 0));
    case Opcode::Call:
    case Opcode::Callr:
    case Opcode::Ret: return c.transfer;
    case Opcode::Br: return taken ? c.transfer : c.branch_not_taken;
    case Opcode::Svc: return c.svc;
    case Opcode::Mpuwr:
    case Opcode::Flashwr: return c.privileged;
    case Opcode::Halt:
    case Opcode::Trap: return c.halt;
  }
  return 1;
}

SimConfig SimConfig::for_image(const fw::FlatImage& image, const esp::MemoryMap& map) {
  SimConfig c;
  c.map = map;
  c.enable_mpu = image.flags & fw::kImageEsp;
  c.use_urng = image.flags & fw::kImageUrng;
  c.canary.terminator_style = image.flags & fw::kImageTerminatorCanary;
  c.policy = ssp::PolicyKind((image.flags >> fw::kImagePolicyShift) & 7);
  if (image.flags & fw::kImageRamScenario) {
    c.scenario = esp::Scenario::ExecuteFromRam;
    c.map.ram_code = c.map.ram_code_or_default();
  }
  return c;
}

urng::RngState seed_generator(const SimConfig& config, std::span<const std::uint8_t> suv, std::uint64_t boot_seed) {
  auto sources = urng::EntropySources::defaults(config.entropy, urng::splitmix64(boot_seed ^ 0x4A177E5ull));
  return urng::rng_init(config.rng, suv, config.entropy, std::move(sources));
}

urng::RngState seed_generator(const SimConfig& config, std::uint64_t boot_seed) {
  auto device = urng::SramDevice::manufacture(config.device_seed, config.map.sram.size, config.sram_unstable_fraction,
                                              config.sram_boot_noise);
  return seed_generator(config, device.sample(boot_seed), boot_seed);
}

Machine::Machine(fw::FlatImage image, SimConfig config)
    : image_(std::move(image)),
      config_(std::move(config)),
      device_(urng::SramDevice::manufacture(config_.device_seed, config_.map.sram.size,
                                            config_.sram_unstable_fraction, config_.sram_boot_noise)),
      policy_(config_.policy) {
  const auto& map = config_.map;
  map.validate();
  flash_.assign(map.flash.size, 0xFF);
  const bool ram = config_.scenario == esp::Scenario::ExecuteFromRam;
  if (ram) {
    if (!map.ram_code || image_.flash_base != map.ram_code->base ||
        image_.code.size() > map.ram_code->size) {
      throw Error(ErrorCode::InvalidImage, "execute-from-RAM images must be linked at the ram_code range");
    }
  } else if (!inside(image_.flash_base, std::uint32_t(image_.code.size()), map.flash)) {
    throw Error(ErrorCode::InvalidImage, "image code does not fit in flash");
  }
  if (image_.code.size() > flash_.size()) throw Error(ErrorCode::InvalidImage, "image larger than flash");
  std::uint32_t load_at = ram ? 0 : image_.flash_base - map.flash.base;
  std::copy(image_.code.begin(), image_.code.end(), flash_.begin() + load_at);

  if (!inside(image_.data_base, image_.data_size, map.sram) ||
      image_.data_base < map.sram.base + config_.stack_size) {
    throw Error(ErrorCode::InvalidImage, "data section must sit in SRAM above the first stack slot");
  }
  if (auto h = image_.symbol(fw::kViolationHandler)) {
    violation_handler_ = *h;
    has_violation_handler_ = true;
  }
  boot_seed_ = config_.boot_seed;
}

void Machine::log(EventKind kind, int thread, std::uint32_t pc, std::string detail, std::uint32_t addr,
                  AccessKind access, std::uint32_t code) {
  events_.push_back({kind, cycle_, boot_id_, thread, pc, addr, access, code, std::move(detail)});
}

void Machine::log_boot_step(const std::string& step) { log(EventKind::Boot, -1, 0, "step=" + step); }

std::string Machine::event_log() const {
  std::string out;
  for (const auto& e : events_) out += e.to_string() + "\n";
  return out;
}

void Machine::boot() {
  if (!events_.empty()) throw Error(ErrorCode::InvalidArgument, "machine already booted");
  boot_once();
}

void Machine::boot_once() {
  in_boot_ = true;
  threads_.clear();
  current_ = -1;
  policy_ = ssp::ViolationPolicy(config_.policy);
  mpu_.reset();
  mpu_active_ = false;
  rng_.reset();
  scb_.fill(0);
  mpu_regs_.fill(0);
  input_pos_ = 0;
  starvations_logged_ = 0;
  const auto& map = config_.map;

  // (1) SRAM is sampled before anything writes to it.
  sram_ = device_.sample(boot_seed_);
  log_boot_step("suv");

  // (2) Generator seeding, then the runtime may initialize its data.
  if (config_.use_urng) {
    rng_ = seed_generator(config_, sram_, boot_seed_);
  } else {
    stub_rng_state_ = urng::splitmix64(boot_seed_);
  }
  log_boot_step("rng");
  std::fill_n(host_ptr(image_.data_base), image_.data_size, 0);
  raw_write(image_.data_base, image_.data_init.data(), image_.data_init.size());
  sync_rng_block();

  // (3) One master canary per boot.
  if (config_.use_urng) {
    canary_ = ssp::generate_master_canary(*rng_, config_.canary, boot_id_);
    sync_rng_block();
  } else {
    canary_ = ssp::generate_master_canary([this] { return rand32(); }, config_.canary, boot_id_);
  }
  canary_history_.push_back(canary_);
  if (auto g = image_.symbol(fw::kGuardSymbol)) {
    std::uint8_t bytes[4];
    store_le32(bytes, canary_.value);
    raw_write(*g, bytes, 4);
  }
  log_boot_step("canary");

  // (4) MPU plan for the image's sensitive code.
  const bool ram = config_.scenario == esp::Scenario::ExecuteFromRam;
  if (config_.enable_mpu) {
    esp::MemoryMap planning = map;
    if (auto s = image_.sensitive_section()) {
      planning.sensitive_ranges.push_back({s->first, std::uint64_t(s->second - s->first)});
      if (ram) {
        std::uint32_t alias = map.flash.base + (s->first - image_.flash_base);
        planning.sensitive_ranges.push_back({alias, std::uint64_t(s->second - s->first)});
      }
    }
    mpu_ = esp::plan_mpu(planning, config_.scenario);
    mpu_active_ = true;
    store_le32(&mpu_regs_[esp::kMpuCtrlOffset], 1);
    log_boot_step("mpu regions=" + std::to_string(mpu_->regions.size()));
  } else {
    log_boot_step("mpu disabled");
  }

  // (5) Bootloader copy for RAM execution, then sensitive initialization routines.
  if (ram) {
    raw_write(map.ram_code->base, flash_.data(), image_.code.size());
    log_boot_step("copy");
  }
  for (const auto& s : image_.symbols) {
    if (s.kind == fw::SymbolKind::Function && (s.flags & fw::kFnInit)) run_boot_function(s.start, s.name);
  }
  log_boot_step("init");

  // (6) Lockdown.
  if (config_.enable_mpu) {
    if (const auto* stub = image_.find(fw::kLockStub, fw::SymbolKind::Function)) {
      run_boot_function(stub->start, stub->name);
      if (!mpu_->locked) throw Error(ErrorCode::InvalidImage, "lock routine returned without locking the MPU");
    } else {
      mpu_ = esp::lock_mpu(*mpu_);
      log(EventKind::Lock, -1, 0, "native");
    }
  }
  log_boot_step("lock");

  // (7) Application threads.
  in_boot_ = false;
  main_start_cycle_ = cycle_;
  spawn(image_.entry, 0, std::nullopt);
  log_boot_step("threads");
  schedule();
}

void Machine::run_boot_function(std::uint32_t entry, const std::string& what) {
  Thread t;
  t.id = -1;
  t.stack_base = config_.map.sram.base;
  t.stack_top = t.stack_base + config_.stack_size;
  t.regs[fw::kSp] = t.stack_top;
  t.regs[fw::kLr] = kThreadExitLr;
  t.regs[fw::kPc] = entry;
  t.min_sp = t.stack_top;
  std::uint64_t start = cycle_;
  while (t.state == ThreadState::Ready && t.regs[fw::kPc] != kThreadExitLr && !stop_) {
    if (cycle_ - start > config_.boot_function_budget) {
      throw Error(ErrorCode::InvalidImage, "boot routine " + what + " did not return");
    }
    execute(t);
  }
  if (t.state != ThreadState::Ready || stop_) {
    throw Error(ErrorCode::InvalidImage, "boot routine " + what + " faulted");
  }
}

Machine::Space Machine::space_of(std::uint32_t addr, std::uint32_t size) const {
  const auto& m = config_.map;
  if (inside(addr, size, m.flash)) return Space::Flash;
  if (inside(addr, size, m.sram)) return Space::Sram;
  if (inside(addr, size, m.scb)) return Space::Scb;
  if (inside(addr, size, m.mpu_regs)) return Space::MpuRegs;
  if (inside(addr, size, m.peripherals)) return Space::Periph;
  return Space::None;
}

std::uint8_t* Machine::host_ptr(std::uint32_t addr) {
  return const_cast<std::uint8_t*>(std::as_const(*this).host_ptr(addr));
}

const std::uint8_t* Machine::host_ptr(std::uint32_t addr) const {
  const auto& m = config_.map;
  switch (space_of(addr, 1)) {
    case Space::Flash: return flash_.data() + (addr - m.flash.base);
    case Space::Sram: return sram_.data() + (addr - m.sram.base);
    case Space::Scb: return scb_.data() + (addr - m.scb.base);
    case Space::MpuRegs: return mpu_regs_.data() + (addr - m.mpu_regs.base);
    default: return nullptr;
  }
}

std::optional<Machine::Fault> Machine::check(std::uint32_t addr, std::uint32_t size, AccessKind kind) {
  Space space = space_of(addr, size);
  if (mpu_ && mpu_active_) {
    bool allowed = true;
    std::string why;
    for (std::uint32_t a : {addr, addr + size - 1}) {
      auto p = esp::lookup_permission(*mpu_, a);
      if (!p) {
        allowed = false;
        why = "no MPU region";
        break;
      }
      bool ok = kind == AccessKind::Fetch ? (p->read && p->execute)
                : kind == AccessKind::Read ? p->read
                                           : p->write;
      if (!ok) {
        allowed = false;
        why = "MPU " + p->to_string();
        break;
      }
    }
    if (config_.trace_accesses) trace_.push_back({addr, kind, mpu_->locked, allowed});
    if (!allowed) return Fault{EventKind::MemFault, kind, addr, why};
  }
  if (space == Space::None) return Fault{EventKind::BusFault, kind, addr, "unmapped"};
  if (kind == AccessKind::Fetch && space != Space::Flash && space != Space::Sram) {
    return Fault{EventKind::BusFault, kind, addr, "not executable memory"};
  }
  if (kind == AccessKind::Write && space == Space::Flash) {
    return Fault{EventKind::BusFault, kind, addr, "flash needs the flash controller"};
  }
  return std::nullopt;
}

std::optional<Machine::Fault> Machine::load(std::uint32_t addr, std::uint32_t size, std::uint32_t& value) {
  if (auto f = check(addr, size, AccessKind::Read)) return f;
  if (space_of(addr, size) == Space::Periph) {
    value = 0;
    return std::nullopt;
  }
  const std::uint8_t* p = host_ptr(addr);
  value = size == 1 ? p[0] : load_le32(p);
  return std::nullopt;
}

std::optional<Machine::Fault> Machine::store(std::uint32_t addr, std::uint32_t size, std::uint32_t value) {
  if (auto f = check(addr, size, AccessKind::Write)) return f;
  Space space = space_of(addr, size);
  if (space == Space::Periph) {
    if (addr == config_.map.console_addr) output_.push_back(char(value & 0xFF));
    return std::nullopt;
  }
  std::uint8_t* p = host_ptr(addr);
  if (size == 1) {
    p[0] = std::uint8_t(value);
  } else {
    store_le32(p, value);
  }
  return std::nullopt;
}

void Machine::raw_write(std::uint32_t addr, const std::uint8_t* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t* p = host_ptr(addr + std::uint32_t(i));
    if (!p) throw Error(ErrorCode::InvalidImage, "host write outside memory at " + hex32(addr + std::uint32_t(i)));
    *p = data[i];
  }
}

void Machine::mpu_control_write(std::uint32_t value, Thread& t) {
  if (!mpu_) return;
  mpu_active_ = value & 1;
  if ((value & 2) && !mpu_->locked) {
    mpu_ = esp::lock_mpu(*mpu_);
    mpu_active_ = true;
    log(EventKind::Lock, t.id, t.regs[fw::kPc], "control register");
  }
}

void Machine::sync_rng_block() {
  if (!rng_) return;
  const auto* g = image_.find(fw::kRngStateSymbol, fw::SymbolKind::Global);
  if (!g || g->end - g->start < urng::kControlBlockBytes) return;
  auto block = rng_->serialize();
  raw_write(g->start, block.data(), block.size());
}

std::uint32_t Machine::rand32() {
  if (!rng_) {
    stub_rng_state_ += 0x9E3779B97F4A7C15ull;
    return urng::fold64(urng::splitmix64(stub_rng_state_));
  }
  std::uint32_t v = rng_->rand32();
  if (rng_->ledger().starvations > starvations_logged_) {
    starvations_logged_ = rng_->ledger().starvations;
    int tid = current_ >= 0 ? threads_[current_].id : -1;
    log(EventKind::ReseedStarvation, tid, 0);
  }
  sync_rng_block();
  return v;
}

Thread* Machine::thread(int id) {
  for (auto& t : threads_) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

int Machine::current_thread() const { return current_ >= 0 ? threads_[current_].id : -1; }

std::uint32_t Machine::peak_stack() const {
  std::uint32_t peak = 0;
  for (const auto& t : threads_) peak = std::max(peak, t.stack_top - t.min_sp);
  return peak;
}

int Machine::spawn(std::uint32_t entry, std::uint32_t arg, std::optional<std::uint32_t> restart_handler) {
  const auto& map = config_.map;
  const int slots = int((image_.data_base - map.sram.base) / config_.stack_size);
  std::vector<bool> used(std::size_t(slots), false);
  for (const auto& t : threads_) {
    if (t.state == ThreadState::Ready) used[std::size_t(t.slot)] = true;
  }
  auto free = std::find(used.begin(), used.end(), false);
  if (free == used.end()) return -1;
  Thread t;
  t.id = next_thread_id_++;
  t.slot = int(free - used.begin());
  t.stack_base = map.sram.base + std::uint32_t(t.slot) * config_.stack_size;
  t.stack_top = t.stack_base + config_.stack_size;
  t.regs[0] = arg;
  t.regs[fw::kSp] = t.stack_top;
  t.regs[fw::kLr] = kThreadExitLr;
  t.regs[fw::kPc] = entry;
  t.min_sp = t.stack_top;
  if (restart_handler) policy_.register_handler(t.id, *restart_handler);
  threads_.push_back(t);
  log(EventKind::ThreadStart, t.id, entry, "slot=" + std::to_string(t.slot));
  return t.id;
}

void Machine::fault(Thread& t, const Fault& f) {
  log(f.kind, t.id, t.regs[fw::kPc], f.detail, f.addr, f.access);
  if (in_boot_ || t.id < 0) {
    t.state = ThreadState::Dead;
    return;
  }
  if (config_.halt_on_memfault) {
    stop_ = StopReason::Halted;
    return;
  }
  t.state = ThreadState::Dead;
  policy_.deregister(t.id);
  log(EventKind::ThreadKilled, t.id, t.regs[fw::kPc], "fault");
}

bool Machine::execute(Thread& t) {
  const std::uint32_t pc = t.regs[fw::kPc];
  if (pc == kThreadExitLr && t.id >= 0) {
    t.state = ThreadState::Dead;
    policy_.deregister(t.id);
    log(EventKind::ThreadExit, t.id, pc, "returned");
    return false;
  }
  if (!breakpoints_.empty()) {
    auto [lo, hi] = breakpoints_.equal_range(pc);
    for (auto it = lo; it != hi; ++it) {
      if (it->second.thread != -1 && it->second.thread != t.id) continue;
      auto hook = std::move(it->second.hook);
      breakpoints_.erase(it);
      hook(*this, t);
      if (t.state != ThreadState::Ready || t.regs[fw::kPc] != pc || stop_ || pause_) return false;
      break;
    }
  }
  if (auto f = check(pc, 4, AccessKind::Fetch)) {
    cycle_ += 1;
    fault(t, *f);
    return false;
  }
  if (pc % 4 != 0) {
    cycle_ += 1;
    fault(t, {EventKind::UsageFault, AccessKind::Fetch, pc, "unaligned pc"});
    return false;
  }
  const std::uint32_t word = load_le32(host_ptr(pc));
  auto decoded = fw::decode(word);
  if (!decoded) {
    cycle_ += 1;
    fault(t, {EventKind::UsageFault, AccessKind::Fetch, pc, "undefined instruction " + hex32(word)});
    return false;
  }
  const fw::Instruction& in = *decoded;
  auto& r = t.regs;
  auto get = [&](fw::Reg reg) -> std::uint32_t { return reg == fw::kPc ? pc : r[reg]; };
  std::uint32_t next = pc + 4;
  auto set = [&](fw::Reg reg, std::uint32_t v) {
    if (reg == fw::kPc) {
      next = v;
    } else {
      r[reg] = v;
      if (reg == fw::kSp) t.min_sp = std::min(t.min_sp, v);
    }
  };
  auto note_handler_transfer = [&](std::uint32_t target, bool conditional) {
    if (has_violation_handler_ && target == violation_handler_) {
      t.handler_origin = pc;
      t.handler_origin_conditional = conditional;
    }
  };
  bool taken = false;
  redirected_ = false;
  std::optional<Fault> f;

  switch (in.op) {
    case Opcode::Nop: break;
    case Opcode::Trap:
      f = Fault{EventKind::UsageFault, AccessKind::Fetch, pc, "trap #" + std::to_string(in.imm)};
      break;
    case Opcode::Halt:
      stop_ = StopReason::Halted;
      halt_code_ = std::uint32_t(in.imm);
      log(EventKind::Halt, t.id, pc, {}, 0, AccessKind::Read, std::uint32_t(in.imm));
      break;
    case Opcode::Mov:
      switch (fw::MovMode(in.sub)) {
        case fw::MovMode::Reg: set(in.rd, get(in.rm)); break;
        case fw::MovMode::Imm: set(in.rd, std::uint32_t(in.imm) & 0xFFFF); break;
        case fw::MovMode::High: set(in.rd, (get(in.rd) & 0xFFFF) | (std::uint32_t(in.imm) << 16)); break;
        case fw::MovMode::DataAddr: set(in.rd, image_.data_base + std::uint32_t(in.imm)); break;
        case fw::MovMode::CodeAddr: set(in.rd, pc + std::uint32_t(in.imm) * 4); break;
      }
      break;
    case Opcode::Alu: {
      const std::uint32_t a = get(in.rn);
      const std::uint32_t b = in.imm_form ? std::uint32_t(in.imm) : get(in.rm);
      std::uint32_t v = 0;
      switch (fw::AluOp(in.sub)) {
        case fw::AluOp::Add: v = a + b; break;
        case fw::AluOp::Sub: v = a - b; break;
        case fw::AluOp::And: v = a & b; break;
        case fw::AluOp::Orr: v = a | b; break;
        case fw::AluOp::Eor: v = a ^ b; break;
        case fw::AluOp::Lsl: v = b >= 32 ? 0 : a << b; break;
        case fw::AluOp::Lsr: v = b >= 32 ? 0 : a >> b; break;
        case fw::AluOp::Asr: v = std::uint32_t(std::int32_t(a) >> std::min<std::uint32_t>(b, 31)); break;
        case fw::AluOp::Mul: v = a * b; break;
        case fw::AluOp::Udiv: v = b ? a / b : 0; break;
        case fw::AluOp::Umod: v = b ? a % b : 0; break;
        case fw::AluOp::Cmp: {
          std::uint32_t d = a - b;
          t.flag_n = d >> 31;
          t.flag_z = d == 0;
          t.flag_c = a >= b;
          t.flag_v = ((a ^ b) & (a ^ d)) >> 31;
          break;
        }
      }
      if (fw::AluOp(in.sub) != fw::AluOp::Cmp) set(in.rd, v);
      break;
    }
    case Opcode::Load: {
      std::uint32_t v = 0;
      f = load(get(in.rn) + std::uint32_t(in.imm), in.byte_access ? 1 : 4, v);
      if (!f) set(in.rd, v);
      break;
    }
    case Opcode::Store:
      f = store(get(in.rn) + std::uint32_t(in.imm), in.byte_access ? 1 : 4, get(in.rd));
      break;
    case Opcode::Pushm: {
      std::uint32_t sp = r[fw::kSp];
      auto push = [&](std::uint32_t v) {
        sp -= 4;
        return store(sp, 4, v);
      };
      if (in.with_lr) f = push(r[fw::kLr]);
      for (std::size_t i = 0; !f && i < in.regs.size(); ++i) f = push(r[in.regs[i]]);
      if (!f) set(fw::kSp, sp);
      break;
    }
    case Opcode::Popm: {
      std::uint32_t sp = r[fw::kSp];
      std::array<std::uint32_t, 16> out = r;
      auto pop = [&](fw::Reg reg) {
        std::uint32_t v = 0;
        auto e = load(sp, 4, v);
        out[reg] = v;
        sp += 4;
        return e;
      };
      for (std::size_t i = 0; !f && i < in.regs.size(); ++i) f = pop(in.regs[i]);
      if (!f && in.with_lr) f = pop(fw::kLr);
      if (!f) {
        r = out;
        r[fw::kSp] = sp;
      }
      break;
    }
    case Opcode::Call: {
      std::uint32_t target = pc + std::uint32_t(in.imm) * 4;
      r[fw::kLr] = pc + 4;
      next = target;
      taken = true;
      note_handler_transfer(target, false);
      break;
    }
    case Opcode::Callr: {
      std::uint32_t target = get(in.rm);
      r[fw::kLr] = pc + 4;
      next = target;
      taken = true;
      note_handler_transfer(target, false);
      break;
    }
    case Opcode::Ret:
      next = r[fw::kLr];
      taken = true;
      break;
    case Opcode::Br:
      if (cond_holds(fw::Cond(in.sub), t)) {
        taken = true;
        next = pc + std::uint32_t(in.imm) * 4;
        note_handler_transfer(next, fw::Cond(in.sub) != fw::Cond::Al);
      }
      break;
    case Opcode::Svc:
      cycle_ += instruction_cost(in, false, config_.costs);
      r[fw::kPc] = next;
      do_svc(t, std::uint16_t(in.imm), pc);
      return true;
    case Opcode::Mpuwr: {
      std::uint32_t ctrl = config_.map.mpu_regs.base + esp::kMpuCtrlOffset;
      f = store(ctrl, 4, get(in.rm));
      if (!f) mpu_control_write(get(in.rm), t);
      break;
    }
    case Opcode::Flashwr: {
      std::uint32_t addr = get(in.rn);
      if (space_of(addr, 4) != Space::Flash || addr % 4) {
        f = Fault{EventKind::BusFault, AccessKind::Write, addr, "flash controller address"};
      } else {
        store_le32(host_ptr(addr), get(in.rd));
      }
      break;
    }
  }

  cycle_ += instruction_cost(in, taken, config_.costs);
  if (f) {
    fault(t, *f);
    return false;
  }
  if (!redirected_ && t.state == ThreadState::Ready) r[fw::kPc] = next;
  return true;
}

void Machine::do_svc(Thread& t, std::uint16_t number, std::uint32_t pc) {
  auto& r = t.regs;
  redirected_ = false;
  switch (number) {
    case svc::kYield:
      yield_ = true;
      break;
    case svc::kSpawn: {
      std::optional<std::uint32_t> handler;
      if (r[1]) handler = r[1];
      int id = spawn(r[0], r[2], handler);
      r[0] = std::uint32_t(id);
      break;
    }
    case svc::kExit:
      t.state = ThreadState::Dead;
      policy_.deregister(t.id);
      log(EventKind::ThreadExit, t.id, pc, "exit");
      break;
    case svc::kRand:
      r[0] = rand32();
      break;
    case svc::kGetc:
      r[0] = input_pos_ < config_.input.size() ? std::uint8_t(config_.input[input_pos_++]) : 0xFFFFFFFFu;
      break;
    case svc::kRegisterRestart:
      if (t.id >= 0) policy_.register_handler(t.id, r[0]);
      break;
    case svc::kViolation: {
      ssp::ViolationInfo info;
      info.source = t.handler_origin && t.handler_origin_conditional ? ssp::ViolationSource::Canary
                                                                     : ssp::ViolationSource::TrapStub;
      info.pc = t.handler_origin.value_or(pc);
      info.resume_pc = info.pc + 4;
      t.handler_origin.reset();
      log(info.source == ssp::ViolationSource::Canary ? EventKind::CanaryViolation : EventKind::TrapViolation, t.id,
          info.pc, "canary=" + hex32(canary_.value));
      if (in_boot_ || t.id < 0) {
        t.state = ThreadState::Dead;
        break;
      }
      ssp::handle_violation(*this, policy_, t.id, info);
      break;
    }
    default:
      fault(t, {EventKind::UsageFault, AccessKind::Fetch, pc, "unknown svc #" + std::to_string(number)});
      break;
  }
}

void Machine::log_alert(int thread_id, ssp::PolicyKind policy, const ssp::ViolationInfo& info,
                        const std::string& note) {
  log(EventKind::Alert, thread_id, info.pc, "policy=" + ssp::to_string(policy) + " " + note, 0, AccessKind::Read,
      std::uint32_t(policy));
}

void Machine::resume(int thread_id, std::uint32_t pc) { set_pc(thread_id, pc); }

void Machine::kill_thread(int thread_id) {
  Thread* t = thread(thread_id);
  if (!t || t->state == ThreadState::Dead) return;
  t->state = ThreadState::Dead;
  policy_.deregister(thread_id);
  log(EventKind::ThreadKilled, thread_id, t->regs[fw::kPc], "policy");
}

void Machine::restart_thread(int thread_id, std::uint32_t handler) {
  Thread* t = thread(thread_id);
  if (!t) return;
  t->state = ThreadState::Dead;
  policy_.deregister(thread_id);
  log(EventKind::ThreadRestarted, thread_id, handler, "handler");
  if (spawn(handler, 0, handler) < 0) log(EventKind::ThreadKilled, thread_id, handler, "no free stack slot");
}

void Machine::cold_reboot() {
  reboot_pending_ = true;
  log(EventKind::Reboot, current_thread(), 0, "cold");
}

void Machine::shutdown() {
  for (auto& t : threads_) {
    if (t.state == ThreadState::Ready) {
      t.state = ThreadState::Dead;
      policy_.deregister(t.id);
    }
  }
  stop_ = StopReason::ShutDown;
  log(EventKind::Shutdown, current_thread(), 0);
}

void Machine::set_pc(int thread_id, std::uint32_t pc) {
  if (Thread* t = thread(thread_id)) {
    t->regs[fw::kPc] = pc;
    redirected_ = true;
  }
}

void Machine::set_reg(int thread_id, int reg, std::uint32_t value) {
  if (Thread* t = thread(thread_id)) {
    t->regs[std::size_t(reg)] = value;
    if (reg == fw::kPc) redirected_ = true;
  }
}

bool Machine::any_ready() const {
  return std::any_of(threads_.begin(), threads_.end(), [](const Thread& t) { return t.state == ThreadState::Ready; });
}

void Machine::schedule() {
  yield_ = false;
  quantum_start_ = cycle_;
  const int n = int(threads_.size());
  for (int k = 1; k <= n; ++k) {
    int idx = ((current_ < 0 ? -1 : current_) + k) % n;
    if (idx < 0) idx += n;
    if (threads_[std::size_t(idx)].state == ThreadState::Ready) {
      current_ = idx;
      return;
    }
  }
  current_ = -1;
  if (!stop_) stop_ = StopReason::AllThreadsDead;
}

void Machine::finish_step() {
  if (reboot_pending_ && !stop_) {
    reboot_pending_ = false;
    if (boot_id_ >= config_.max_reboots) {
      shutdown();
      return;
    }
    ++boot_id_;
    boot_seed_ = urng::splitmix64(boot_seed_ + boot_id_);
    boot_once();
    return;
  }
  if (stop_) return;
  const Thread& cur = threads_[std::size_t(current_)];
  if (cur.state != ThreadState::Ready || yield_ || cycle_ - quantum_start_ >= config_.quantum) schedule();
}

bool Machine::step() {
  if (stop_) return false;
  if (current_ < 0 || threads_[std::size_t(current_)].state != ThreadState::Ready) schedule();
  if (stop_) return false;
  execute(threads_[std::size_t(current_)]);
  finish_step();
  return !stop_;
}

RunResult Machine::run(std::uint64_t max_cycles) {
  const std::uint64_t start = cycle_;
  while (!stop_ && !pause_ && cycle_ - start < max_cycles) step();
  pause_ = false;
  if (!stop_ && cycle_ - start >= max_cycles) return {StopReason::CycleLimit, cycle_ - start};
  return {*stop_, cycle_ - start};
}

std::optional<std::uint32_t> Machine::peek32(std::uint32_t addr) const {
  if (space_of(addr, 4) == Space::None || space_of(addr, 4) == Space::Periph) return std::nullopt;
  return load_le32(host_ptr(addr));
}

std::optional<std::uint8_t> Machine::peek8(std::uint32_t addr) const {
  const std::uint8_t* p = host_ptr(addr);
  if (!p) return std::nullopt;
  return *p;
}

bool Machine::attacker_write(int thread_id, std::uint32_t addr, const std::vector<std::uint8_t>& bytes) {
  Thread* t = thread(thread_id);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (auto f = store(addr + std::uint32_t(i), 1, bytes[i])) {
      if (t) {
        fault(*t, *f);
      } else {
        log(f->kind, thread_id, 0, f->detail, f->addr, f->access);
      }
      return false;
    }
  }
  return true;
}

void Machine::add_breakpoint(std::uint32_t pc, std::function<void(Machine&, Thread&)> hook, int thread_id) {
  breakpoints_.insert({pc, Breakpoint{thread_id, std::move(hook)}});
}

namespace {

double pct(double delta, double denom) { return denom > 0 ? 100.0 * delta / denom : 0.0; }

}  // namespace

OverheadReport measure_overhead(const fw::FlatImage& baseline, const fw::FlatImage& protected_image,
                                const SimConfig& base_config, const SimConfig& prot_config, unsigned runs,
                                std::uint64_t max_cycles) {
  OverheadReport rep;
  rep.runs = runs;
  rep.base_code = std::uint32_t(baseline.code.size());
  rep.prot_code = std::uint32_t(protected_image.code.size());
  rep.base_data = baseline.data_size;
  rep.prot_data = protected_image.data_size;
  if (protected_image.flags & fw::kImageSsp) rep.canary_stack_bound = fw::stack_depth_estimate(protected_image, 4);

  double base_cycles = 0, prot_cycles = 0;
  for (unsigned i = 0; i < runs; ++i) {
    SimConfig bc = base_config, pc = prot_config;
    bc.boot_seed = base_config.boot_seed + i;
    pc.boot_seed = prot_config.boot_seed + i;
    Machine mb(baseline, bc), mp(protected_image, pc);
    mb.boot();
    mp.boot();
    auto rb = mb.run(max_cycles);
    auto rp = mp.run(max_cycles);
    if (rb.reason != StopReason::Halted || rp.reason != StopReason::Halted) {
      throw Error(ErrorCode::WorkloadDivergence, "workload did not run to halt (baseline " + to_string(rb.reason) +
                                                     ", protected " + to_string(rp.reason) + ")");
    }
    if (mb.output() != mp.output() || mb.halt_code() != mp.halt_code()) {
      throw Error(ErrorCode::WorkloadDivergence, "observable output differs in run " + std::to_string(i));
    }
    base_cycles += double(mb.cycle() - mb.main_start_cycle());
    prot_cycles += double(mp.cycle() - mp.main_start_cycle());
    rep.base_memory = std::max(rep.base_memory, mb.peak_stack());
    rep.prot_memory = std::max(rep.prot_memory, mp.peak_stack());
  }
  rep.base_cycles = runs ? base_cycles / runs : 0;
  rep.prot_cycles = runs ? prot_cycles / runs : 0;

  const double flash = double(prot_config.map.flash.size);
  const double sram = double(prot_config.map.sram.size);
  rep.code = {pct(double(rep.prot_code) - rep.base_code, rep.base_code), pct(double(rep.prot_code) - rep.base_code, flash)};
  rep.data = {pct(double(rep.prot_data) - rep.base_data, rep.base_data), pct(double(rep.prot_data) - rep.base_data, sram)};
  rep.memory = {pct(double(rep.prot_memory) - rep.base_memory, rep.base_memory),
                pct(double(rep.prot_memory) - rep.base_memory, sram)};
  // Cycles have no device-wide denominator, so both columns carry the application-relative figure.
  double rt = pct(rep.prot_cycles - rep.base_cycles, rep.base_cycles);
  rep.runtime = {rt, rt};
  return rep;
}

}  // namespace uarmor::sim
