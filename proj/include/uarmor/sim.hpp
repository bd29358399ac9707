#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uarmor/image.hpp"
#include "uarmor/uesp.hpp"
#include "uarmor/urng.hpp"
#include "uarmor/ussp.hpp"

namespace uarmor::sim {

enum class AccessKind : std::uint8_t { Fetch, Read, Write };
std::string to_string(AccessKind k);

enum class EventKind : std::uint8_t {
  Boot,
  Lock,
  ThreadStart,
  ThreadExit,
  MemFault,
  BusFault,
  UsageFault,
  CanaryViolation,
  TrapViolation,
  Alert,
  ThreadKilled,
  ThreadRestarted,
  Reboot,
  Shutdown,
  Halt,
  ReseedStarvation,
};
std::string to_string(EventKind k);
std::optional<EventKind> parse_event_kind(const std::string& text);

struct Event {
  EventKind kind = EventKind::Boot;
  std::uint64_t cycle = 0;
  std::uint64_t boot_id = 0;
  int thread = -1;
  std::uint32_t pc = 0;
  std::uint32_t addr = 0;
  AccessKind access = AccessKind::Read;
  std::uint32_t code = 0;
  std::string detail;
  /// One line: boot, cycle, thread, kind and the kind-specific fields.
  std::string to_string() const;
};

/// Cycle cost table. PUSHM/POPM cost `stack_per_reg` for every transferred register.
struct CycleCosts {
  std::uint32_t alu = 1;
  std::uint32_t mem = 2;
  std::uint32_t stack_per_reg = 2;
  std::uint32_t transfer = 3;
  std::uint32_t branch_not_taken = 1;
  std::uint32_t svc = 10;
  std::uint32_t privileged = 2;
  std::uint32_t halt = 1;
};
std::uint32_t instruction_cost(const fw::Instruction& in, bool branch_taken, const CycleCosts& costs = {});

inline constexpr std::uint32_t kThreadExitLr = 0xFFFFFFF1u;

namespace svc {
inline constexpr std::uint16_t kYield = 1;
inline constexpr std::uint16_t kSpawn = 2;
inline constexpr std::uint16_t kExit = 3;
inline constexpr std::uint16_t kRand = 4;
inline constexpr std::uint16_t kGetc = 5;
inline constexpr std::uint16_t kRegisterRestart = 6;
inline constexpr std::uint16_t kViolation = 16;
}  // namespace svc

struct SimConfig {
  esp::MemoryMap map = esp::MemoryMap::lm3s6965();
  esp::Scenario scenario = esp::Scenario::ExecuteFromFlash;
  bool enable_mpu = true;
  bool use_urng = true;
  urng::RngConfig rng;
  urng::EntropyModel entropy;
  ssp::CanaryConfig canary;
  ssp::PolicyKind policy = ssp::PolicyKind::Fatal;
  std::uint64_t device_seed = 1;
  std::uint64_t boot_seed = 1;
  /// SRAM cells that power up unstable; the rest hold a per-device constant.
  double sram_unstable_fraction = 0.05;
  double sram_boot_noise = 0.0;
  std::uint32_t quantum = 64;
  std::uint32_t stack_size = 2048;
  bool halt_on_memfault = false;
  std::uint32_t max_reboots = 8;
  std::uint64_t boot_function_budget = 1000000;
  std::string input;
  bool trace_accesses = false;
  CycleCosts costs;

  /// Protection settings recorded in the image header.
  static SimConfig for_image(const fw::FlatImage& image, const esp::MemoryMap& map = esp::MemoryMap::lm3s6965());
};

/// The generator state boot would produce from this SUV sample.
urng::RngState seed_generator(const SimConfig& config, std::span<const std::uint8_t> suv, std::uint64_t boot_seed);
/// Same, sampling the configured device's SRAM first.
urng::RngState seed_generator(const SimConfig& config, std::uint64_t boot_seed);

enum class ThreadState : std::uint8_t { Ready, Dead };

struct Thread {
  int id = 0;
  int slot = 0;
  std::uint32_t stack_base = 0;
  std::uint32_t stack_top = 0;
  std::array<std::uint32_t, 16> regs{};
  ThreadState state = ThreadState::Ready;
  bool flag_n = false, flag_z = false, flag_c = false, flag_v = false;
  std::uint32_t min_sp = 0;
  /// Origin of the most recent transfer into the violation handler.
  std::optional<std::uint32_t> handler_origin;
  bool handler_origin_conditional = false;
};

struct AccessRecord {
  std::uint32_t addr;
  AccessKind kind;
  bool locked;
  bool allowed;
};

enum class StopReason : std::uint8_t { Halted, AllThreadsDead, CycleLimit, ShutDown, BootFailed };
std::string to_string(StopReason r);

struct RunResult {
  StopReason reason = StopReason::CycleLimit;
  std::uint64_t cycles = 0;
};

class Machine : public ssp::ViolationHost {
 public:
  Machine(fw::FlatImage image, SimConfig config);

  /// Runs the fixed boot sequence; throws on configuration errors (entropy, MPU budget, ...).
  void boot();
  /// Executes one instruction of the current thread. Returns false once the machine has stopped.
  bool step();
  RunResult run(std::uint64_t max_cycles = 50000000);

  const std::vector<Event>& events() const { return events_; }
  std::string event_log() const;
  const std::string& output() const { return output_; }
  std::uint64_t cycle() const { return cycle_; }
  std::uint64_t boot_id() const { return boot_id_; }
  std::uint64_t main_start_cycle() const { return main_start_cycle_; }
  const ssp::MasterCanary& canary() const { return canary_; }
  const std::vector<ssp::MasterCanary>& canary_history() const { return canary_history_; }
  bool stopped() const { return stop_.has_value(); }
  std::optional<StopReason> stop_reason() const { return stop_; }
  std::optional<std::uint32_t> halt_code() const { return halt_code_; }
  const std::deque<Thread>& threads() const { return threads_; }
  Thread* thread(int id);
  int current_thread() const;
  const std::optional<esp::MpuPlan>& mpu() const { return mpu_; }
  const urng::RngState* rng() const { return rng_ ? &*rng_ : nullptr; }
  const ssp::ViolationPolicy& policy() const { return policy_; }
  const fw::FlatImage& image() const { return image_; }
  const SimConfig& config() const { return config_; }
  const std::vector<AccessRecord>& access_trace() const { return trace_; }
  /// Peak bytes used by any thread stack.
  std::uint32_t peak_stack() const;

  /// Unchecked debug access (host view of memory).
  std::optional<std::uint32_t> peek32(std::uint32_t addr) const;
  std::optional<std::uint8_t> peek8(std::uint32_t addr) const;
  /// Attacker write primitive: MPU-checked stores attributed to `thread_id`. Returns false on fault.
  bool attacker_write(int thread_id, std::uint32_t addr, const std::vector<std::uint8_t>& bytes);
  /// One-shot hook run when `thread_id` (or any thread if -1) is about to fetch `pc`.
  void add_breakpoint(std::uint32_t pc, std::function<void(Machine&, Thread&)> hook, int thread_id = -1);
  void set_pc(int thread_id, std::uint32_t pc);
  /// Called from a breakpoint hook: the pending instruction is not executed and run() returns.
  void pause() { pause_ = true; }
  /// True once after a pause took effect.
  bool take_pause() { return std::exchange(pause_, false); }
  void set_reg(int thread_id, int reg, std::uint32_t value);

  // ViolationHost
  void log_alert(int thread_id, ssp::PolicyKind policy, const ssp::ViolationInfo& info,
                 const std::string& note) override;
  void resume(int thread_id, std::uint32_t pc) override;
  void kill_thread(int thread_id) override;
  void restart_thread(int thread_id, std::uint32_t handler) override;
  void cold_reboot() override;
  void shutdown() override;

 private:
  enum class Space : std::uint8_t { None, Flash, Sram, Scb, MpuRegs, Periph };
  struct Breakpoint {
    int thread;
    std::function<void(Machine&, Thread&)> hook;
  };
  struct Fault {
    EventKind kind;
    AccessKind access;
    std::uint32_t addr;
    std::string detail;
  };

  void boot_once();
  void log(EventKind kind, int thread, std::uint32_t pc, std::string detail = {}, std::uint32_t addr = 0,
           AccessKind access = AccessKind::Read, std::uint32_t code = 0);
  void log_boot_step(const std::string& step);
  Space space_of(std::uint32_t addr, std::uint32_t size) const;
  std::optional<Fault> check(std::uint32_t addr, std::uint32_t size, AccessKind kind);
  std::uint8_t* host_ptr(std::uint32_t addr);
  const std::uint8_t* host_ptr(std::uint32_t addr) const;
  std::optional<Fault> load(std::uint32_t addr, std::uint32_t size, std::uint32_t& value);
  std::optional<Fault> store(std::uint32_t addr, std::uint32_t size, std::uint32_t value);
  void raw_write(std::uint32_t addr, const std::uint8_t* data, std::size_t n);
  void mpu_control_write(std::uint32_t value, Thread& t);
  void fault(Thread& t, const Fault& f);
  std::uint32_t rand32();
  void sync_rng_block();
  int spawn(std::uint32_t entry, std::uint32_t arg, std::optional<std::uint32_t> restart_handler);
  void run_boot_function(std::uint32_t entry, const std::string& what);
  bool execute(Thread& t);
  void do_svc(Thread& t, std::uint16_t number, std::uint32_t pc);
  void schedule();
  void finish_step();
  bool any_ready() const;

  fw::FlatImage image_;
  SimConfig config_;
  urng::SramDevice device_;
  std::vector<std::uint8_t> flash_;
  std::vector<std::uint8_t> sram_;
  std::array<std::uint8_t, 64> scb_{};
  std::array<std::uint8_t, 64> mpu_regs_{};
  std::optional<esp::MpuPlan> mpu_;
  std::optional<urng::RngState> rng_;
  std::uint64_t stub_rng_state_ = 0;
  ssp::MasterCanary canary_;
  std::vector<ssp::MasterCanary> canary_history_;
  ssp::ViolationPolicy policy_;
  std::deque<Thread> threads_;
  int current_ = -1;
  int next_thread_id_ = 0;
  std::uint64_t quantum_start_ = 0;
  bool yield_ = false;
  bool redirected_ = false;
  bool mpu_active_ = false;
  bool reboot_pending_ = false;
  bool in_boot_ = false;
  bool pause_ = false;
  std::uint64_t cycle_ = 0;
  std::uint64_t boot_id_ = 0;
  std::uint64_t boot_seed_ = 0;
  std::uint64_t main_start_cycle_ = 0;
  std::size_t input_pos_ = 0;
  std::size_t starvations_logged_ = 0;
  std::optional<StopReason> stop_;
  std::optional<std::uint32_t> halt_code_;
  std::vector<Event> events_;
  std::string output_;
  std::vector<AccessRecord> trace_;
  std::multimap<std::uint32_t, Breakpoint> breakpoints_;
  std::uint32_t violation_handler_ = 0;
  bool has_violation_handler_ = false;
};

struct OverheadMetrics {
  double app_pct = 0;       // relative to the unprotected application
  double resource_pct = 0;  // relative to the device resource (flash, SRAM or baseline cycles)
};

struct OverheadReport {
  std::uint32_t base_code = 0, prot_code = 0;
  std::uint32_t base_data = 0, prot_data = 0;
  std::uint32_t base_memory = 0, prot_memory = 0;  // measured peak stack over all runs
  /// Static worst case added by canaries: longest call chain times the 4-byte slot.
  std::uint32_t canary_stack_bound = 0;
  double base_cycles = 0, prot_cycles = 0;         // mean application cycles over all runs
  OverheadMetrics code, data, memory, runtime;
  unsigned runs = 0;
};

/// Runs both images `runs` times to completion and compares sizes, stack use and application cycles.
/// Throws Error(WorkloadDivergence) if any run's console output differs between the two images.
OverheadReport measure_overhead(const fw::FlatImage& baseline, const fw::FlatImage& protected_image,
                                const SimConfig& base_config, const SimConfig& prot_config, unsigned runs = 25,
                                std::uint64_t max_cycles = 50000000);

}  // namespace uarmor::sim
