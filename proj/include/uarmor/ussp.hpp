#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uarmor/firmware.hpp"

namespace uarmor::urng {
class RngState;
}

namespace uarmor::ssp {

struct CanaryConfig {
  bool terminator_style = false;
  std::uint32_t protect_threshold_buffer_bytes = 8;
  bool protect_all = false;

  unsigned entropy_bits() const { return terminator_style ? 24 : 32; }
};

enum class SspMode : std::uint8_t { Off, Default, All };

struct MasterCanary {
  std::uint32_t value = 0;
  std::uint64_t boot_id = 0;
};

/// The terminator mask clears the lowest-address byte of the little-endian word.
inline std::uint32_t apply_canary_style(std::uint32_t draw, const CanaryConfig& config) {
  return config.terminator_style ? (draw & 0xFFFFFF00u) : draw;
}

MasterCanary generate_master_canary(urng::RngState& rng, const CanaryConfig& config, std::uint64_t boot_id);
MasterCanary generate_master_canary(const std::function<std::uint32_t()>& rand32, const CanaryConfig& config,
                                    std::uint64_t boot_id);

/// Pointers and scalars at the lowest offsets, buffers above them next to the canary slot.
fw::FunctionDef reorder_frame(fw::FunctionDef fn);

bool needs_protection(const fw::FunctionDef& fn, const CanaryConfig& config);

inline constexpr std::size_t kPrologueInstructions = 4;
inline constexpr std::size_t kEpilogueInstructions = 5;

/// Adds the canary store after frame allocation and the check before every frame release.
/// Throws Error(NonCanonicalPrologue) if the function has no frame allocation to anchor on.
/// A function that never releases its frame (never returns) is returned unchanged.
fw::FunctionDef instrument_ssp(fw::FunctionDef fn, const CanaryConfig& config);

/// Applies reorder_frame + instrument_ssp to every function selected by the mode.
fw::FirmwareModule protect_module(fw::FirmwareModule m, SspMode mode, const CanaryConfig& config,
                                  std::vector<std::string>* warnings = nullptr);

enum class PolicyKind : std::uint8_t { Passive = 0, Fatal = 1, ThreadRestart = 2, SystemRestart = 3, Shutdown = 4 };

std::string to_string(PolicyKind k);
std::optional<PolicyKind> parse_policy(const std::string& text);

class ViolationPolicy {
 public:
  explicit ViolationPolicy(PolicyKind kind = PolicyKind::Fatal) : kind_(kind) {}

  PolicyKind kind() const { return kind_; }
  void register_handler(int thread_id, std::uint32_t handler_addr);
  void deregister(int thread_id);
  std::optional<std::uint32_t> handler_for(int thread_id) const;
  std::size_t registered() const { return handlers_.size(); }
  void clear() { handlers_.clear(); }

 private:
  PolicyKind kind_;
  std::map<int, std::uint32_t> handlers_;
};

enum class ViolationSource : std::uint8_t { Canary, TrapStub };

struct ViolationInfo {
  ViolationSource source = ViolationSource::Canary;
  std::uint32_t pc = 0;            // instruction that branched to the handler
  std::uint32_t resume_pc = 0;     // return site for the passive policy
};

/// What the machine must do to carry out a policy decision.
class ViolationHost {
 public:
  virtual ~ViolationHost() = default;
  virtual void log_alert(int thread_id, PolicyKind policy, const ViolationInfo& info, const std::string& note) = 0;
  virtual void resume(int thread_id, std::uint32_t pc) = 0;
  virtual void kill_thread(int thread_id) = 0;
  virtual void restart_thread(int thread_id, std::uint32_t handler) = 0;
  virtual void cold_reboot() = 0;
  virtual void shutdown() = 0;
};

enum class Effect : std::uint8_t { Resumed, ThreadKilled, ThreadRestarted, Rebooted, ShutDown };

Effect handle_violation(ViolationHost& host, ViolationPolicy& policy, int violating_thread, const ViolationInfo& info);

}  // namespace uarmor::ssp
