#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "uarmor/isa.hpp"

namespace uarmor::fw {

inline constexpr std::string_view kViolationHandler = "__violation_handler";
inline constexpr std::string_view kGuardSymbol = "__stack_chk_guard";
inline constexpr std::string_view kRngStateSymbol = "__urng_state";
inline constexpr std::string_view kLockStub = "__mpu_lock";

inline constexpr std::uint16_t kViolationSvc = 16;

enum class LocalKind : std::uint8_t { Buffer = 0, Pointer = 1, Scalar = 2 };

struct LocalVar {
  std::string name;
  LocalKind kind = LocalKind::Scalar;
  std::uint32_t size = 4;
  /// Offset from sp once the frame has been allocated; -1 until laid out.
  std::int32_t offset = -1;

  bool operator==(const LocalVar&) const = default;
};

struct BasicBlock {
  std::string label;
  std::vector<Instruction> insns;

  bool operator==(const BasicBlock&) const = default;
};

struct FunctionDef {
  std::string name;
  std::vector<BasicBlock> blocks;
  bool is_sensitive = false;
  bool protected_by_ssp = false;
  bool force_ssp = false;  // source asked for a canary regardless of coverage
  bool is_init = false;    // boot-time initialization routine
  bool is_lock = false;    // final MPU lock stub
  std::vector<LocalVar> locals;
  bool has_canary = false;

  std::uint32_t locals_size() const;
  std::uint32_t frame_size() const;
  std::uint32_t canary_offset() const { return locals_size(); }
  std::size_t instruction_count() const;
  const LocalVar* find_local(std::string_view local) const;

  bool operator==(const FunctionDef&) const = default;
};

struct GlobalDef {
  std::string name;
  std::uint32_t size = 4;
  std::vector<std::uint8_t> init;  // empty means zero-filled

  bool operator==(const GlobalDef&) const = default;
};

struct FirmwareModule {
  std::vector<FunctionDef> functions;
  std::vector<GlobalDef> globals;
  std::string entry;

  const FunctionDef* find(std::string_view name) const;
  FunctionDef* find(std::string_view name);
  const GlobalDef* find_global(std::string_view name) const;
  std::size_t instruction_count() const;

  /// Throws Error(InvalidArgument) describing the first violated invariant.
  void validate() const;

  bool operator==(const FirmwareModule&) const = default;
};

inline std::uint32_t align4(std::uint32_t v) { return (v + 3) & ~3u; }

/// Places locals in declaration order from the top of the frame downwards.
void assign_default_frame(FunctionDef& fn);

/// Handler target for canary mismatches and trap stubs: raises the violation SVC.
FunctionDef make_violation_handler();

/// Final MPU lock routine: sets ENABLE|LOCK in the MPU control register.
FunctionDef make_lock_stub();

/// Adds the runtime pieces that instrumented code depends on, if missing.
void ensure_violation_handler(FirmwareModule& m);
void ensure_global(FirmwareModule& m, std::string_view name, std::uint32_t size, bool at_front);

}  // namespace uarmor::fw
