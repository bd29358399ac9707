#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace uarmor::esp {

struct AddrRange {
  std::uint32_t base = 0;
  std::uint64_t size = 0;

  std::uint64_t end() const { return std::uint64_t(base) + size; }
  bool contains(std::uint64_t addr) const { return addr >= base && addr < end(); }
  bool operator==(const AddrRange&) const = default;
};

struct MemoryMap {
  AddrRange flash;
  AddrRange sram;
  AddrRange scb;
  AddrRange mpu_regs;
  AddrRange peripherals;
  std::vector<AddrRange> sensitive_ranges;
  std::optional<AddrRange> ram_code;
  std::uint32_t console_addr = 0x4000C000;

  static MemoryMap lm3s6965();
  /// key = value text; see docs/formats.md.
  static MemoryMap parse(const std::string& text);
  static MemoryMap load(const std::string& path);
  std::string to_text() const;
  void validate() const;
  /// ram_code if set, else the upper half of SRAM.
  AddrRange ram_code_or_default() const {
    return ram_code ? *ram_code : AddrRange{std::uint32_t(sram.base + sram.size / 2), sram.size / 2};
  }

  bool operator==(const MemoryMap&) const = default;
};

/// MPU control register offset within the MPU register block; bit0 ENABLE, bit1 LOCK.
inline constexpr std::uint32_t kMpuCtrlOffset = 0x14;

struct Permission {
  bool read = false;
  bool write = false;
  bool execute = false;

  static constexpr Permission rw_xn() { return {true, true, false}; }
  static constexpr Permission ro_x() { return {true, false, true}; }
  static constexpr Permission ro_xn() { return {true, false, false}; }

  std::string to_string() const;
  bool operator==(const Permission&) const = default;
};

struct MpuRegion {
  std::uint8_t number = 0;
  std::uint32_t base = 0;
  std::uint64_t size = 0;
  Permission perm;
  std::uint8_t subregion_disable = 0;
  bool enabled = true;
  bool activate_on_lock = false;
  /// Permission in force while the plan is unlocked; `perm` applies after lock.
  std::optional<Permission> until_lock;
  std::string description;

  bool covers(std::uint32_t addr) const;
  bool operator==(const MpuRegion&) const = default;
};

enum class Scenario : std::uint8_t { ExecuteFromFlash, ExecuteFromRam };

struct MpuPlan {
  std::vector<MpuRegion> regions;
  Scenario scenario = Scenario::ExecuteFromFlash;
  bool locked = false;

  const MpuRegion* region(std::uint8_t number) const;
  bool operator==(const MpuPlan&) const = default;
};

struct PlanOptions {
  bool merge_scb_mpu = false;
};

MpuPlan plan_mpu(const MemoryMap& map, Scenario scenario, const PlanOptions& options = {});

std::optional<Permission> lookup_permission(const MpuPlan& plan, std::uint32_t addr);
/// Throws Error(NoRegionFault) when no enabled region covers the address.
Permission effective_permission(const MpuPlan& plan, std::uint32_t addr);

/// Throws Error(AlreadyLocked) on a second call.
MpuPlan lock_mpu(MpuPlan plan);

/// Table with columns Region No. | Description | Perms. | Size.
std::string dump_plan(const MpuPlan& plan);
std::string format_size(std::uint64_t bytes);

/// Smallest aligned power-of-two region (with a sub-region mask) covering exactly [base, base+size).
std::optional<MpuRegion> exact_region(std::uint32_t base, std::uint64_t size);

}  // namespace uarmor::esp
