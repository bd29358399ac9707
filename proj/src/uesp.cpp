#include "uarmor/uesp.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"

namespace uarmor::esp {

namespace {

constexpr std::uint64_t kFourGiB = std::uint64_t(1) << 32;

std::vector<AddrRange> merge_ranges(std::vector<AddrRange> ranges) {
  std::sort(ranges.begin(), ranges.end(), [](const auto& a, const auto& b) { return a.base < b.base; });
  std::vector<AddrRange> out;
  for (const auto& r : ranges) {
    if (r.size == 0) continue;
    if (!out.empty() && r.base <= out.back().end()) {
      std::uint64_t end = std::max(out.back().end(), r.end());
      out.back().size = end - out.back().base;
    } else {
      out.push_back(r);
    }
  }
  return out;
}

bool inside(const AddrRange& inner, const AddrRange& outer) {
  return inner.base >= outer.base && inner.end() <= outer.end();
}

std::string hex32(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::uppercase << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

MpuRegion need_exact(const AddrRange& r, const std::string& what) {
  auto region = exact_region(r.base, r.size);
  if (!region) {
    throw Error(ErrorCode::AlignmentUnsatisfiable,
                what + " [" + hex32(r.base) + ", " + hex32(r.end()) + ") cannot be covered exactly");
  }
  region->description = what;
  return *region;
}

}  // namespace

MemoryMap MemoryMap::lm3s6965() {
  MemoryMap m;
  m.flash = {0x00000000, 256 * 1024};
  m.sram = {0x20000000, 64 * 1024};
  m.scb = {0xE000ED00, 64};
  m.mpu_regs = {0xE000ED80, 64};
  m.peripherals = {0x40000000, 0x100000};
  m.console_addr = 0x4000C000;
  return m;
}

MemoryMap MemoryMap::parse(const std::string& text) {
  MemoryMap m = lm3s6965();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::ParseError, "memory map line " + std::to_string(line_no) + ": " + msg);
  };
  auto number = [&](const std::string& v) {
    auto n = parse_number(v);
    if (!n) fail("bad number '" + v + "'");
    return *n;
  };
  auto range = [&](const std::string& v) {
    auto dots = v.find("..");
    if (dots == std::string::npos) fail("expected start..end");
    std::uint64_t a = number(v.substr(0, dots));
    std::uint64_t b = number(v.substr(dots + 2));
    if (b <= a) fail("empty range");
    return AddrRange{std::uint32_t(a), b - a};
  };
  bool sensitive_reset = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto set_part = [&](AddrRange& r, const std::string& field) {
      if (field == "base") r.base = std::uint32_t(number(value));
      else if (field == "size") r.size = number(value);
      else fail("unknown field " + key);
    };
    auto dot = key.find('.');
    std::string head = key.substr(0, dot);
    std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (head == "flash") set_part(m.flash, field);
    else if (head == "sram") set_part(m.sram, field);
    else if (head == "scb") set_part(m.scb, field);
    else if (head == "mpu") set_part(m.mpu_regs, field);
    else if (head == "periph") set_part(m.peripherals, field);
    else if (key == "console") m.console_addr = std::uint32_t(number(value));
    else if (key == "ram_code") m.ram_code = range(value);
    else if (key == "sensitive") {
      if (!sensitive_reset) {
        m.sensitive_ranges.clear();
        sensitive_reset = true;
      }
      m.sensitive_ranges.push_back(range(value));
    } else {
      fail("unknown key " + key);
    }
  }
  m.validate();
  return m;
}

MemoryMap MemoryMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open memory map " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string MemoryMap::to_text() const {
  std::ostringstream os;
  auto part = [&](const char* name, const AddrRange& r) {
    os << name << ".base = " << hex32(r.base) << "\n" << name << ".size = " << r.size << "\n";
  };
  part("flash", flash);
  part("sram", sram);
  part("scb", scb);
  part("mpu", mpu_regs);
  part("periph", peripherals);
  os << "console = " << hex32(console_addr) << "\n";
  if (ram_code) os << "ram_code = " << hex32(ram_code->base) << ".." << hex32(ram_code->end()) << "\n";
  for (const auto& s : sensitive_ranges) os << "sensitive = " << hex32(s.base) << ".." << hex32(s.end()) << "\n";
  return os.str();
}

void MemoryMap::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, "memory map: " + msg); };
  std::vector<std::pair<std::string, AddrRange>> parts = {
      {"flash", flash}, {"sram", sram}, {"scb", scb}, {"mpu", mpu_regs}, {"periph", peripherals}};
  for (const auto& [name, r] : parts) {
    if (r.size == 0) fail(name + " has zero size");
    if (r.end() > kFourGiB) fail(name + " exceeds the address space");
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      const auto& a = parts[i].second;
      const auto& b = parts[j].second;
      if (a.base < b.end() && b.base < a.end()) fail(parts[i].first + " overlaps " + parts[j].first);
    }
  }
  if (ram_code && !inside(*ram_code, sram)) fail("ram_code must lie inside sram");
  for (const auto& s : sensitive_ranges) {
    if (!inside(s, flash) && !inside(s, ram_code_or_default())) fail("sensitive range outside code memory");
  }
}

std::string Permission::to_string() const {
  std::string s = write ? "RW" : (read ? "RO" : "NA");
  s += execute ? " + X" : " + XN";
  return s;
}

bool MpuRegion::covers(std::uint32_t addr) const {
  return addr >= base && std::uint64_t(addr) < std::uint64_t(base) + size;
}

const MpuRegion* MpuPlan::region(std::uint8_t number) const {
  for (const auto& r : regions) {
    if (r.number == number) return &r;
  }
  return nullptr;
}

std::optional<MpuRegion> exact_region(std::uint32_t base, std::uint64_t size) {
  if (size == 0 || std::uint64_t(base) + size > kFourGiB) return std::nullopt;
  for (std::uint64_t r = std::max<std::uint64_t>(32, std::bit_ceil(size)); r <= kFourGiB; r <<= 1) {
    std::uint64_t rbase = std::uint64_t(base) & ~(r - 1);
    if (rbase + r < std::uint64_t(base) + size) continue;
    MpuRegion out;
    out.base = std::uint32_t(rbase);
    out.size = r;
    if (rbase == base && r == size) return out;
    if (r < 256) continue;
    std::uint64_t sub = r / 8;
    if ((base - rbase) % sub != 0 || size % sub != 0) continue;
    std::uint8_t mask = 0;
    for (int i = 0; i < 8; ++i) {
      std::uint64_t s0 = rbase + std::uint64_t(i) * sub;
      if (s0 < base || s0 >= std::uint64_t(base) + size) mask |= std::uint8_t(1u << i);
    }
    out.subregion_disable = mask;
    return out;
  }
  return std::nullopt;
}

MpuPlan plan_mpu(const MemoryMap& map, Scenario scenario, const PlanOptions& options) {
  map.validate();
  MpuPlan plan;
  plan.scenario = scenario;

  std::vector<AddrRange> flash_sensitive, ram_sensitive;
  for (const auto& r : merge_ranges(map.sensitive_ranges)) {
    (inside(r, map.flash) ? flash_sensitive : ram_sensitive).push_back(r);
  }
  if (scenario == Scenario::ExecuteFromFlash && !ram_sensitive.empty()) {
    throw Error(ErrorCode::InvalidArgument, "sensitive RAM ranges require the execute-from-RAM scenario");
  }

  const int kf = int(flash_sensitive.size());
  const int kr = int(ram_sensitive.size());
  const int fixed = scenario == Scenario::ExecuteFromFlash ? (options.merge_scb_mpu ? 3 : 4)
                                                           : (options.merge_scb_mpu ? 4 : 5);
  if (fixed + kf + kr > 8) {
    throw Error(ErrorCode::RegionBudgetExceeded, std::to_string(fixed + kf + kr) + " MPU regions needed, 8 available");
  }

  // Numbers are assigned from the top down so the tables keep their canonical layout.
  int next = 7;
  std::vector<MpuRegion> stack;
  auto push = [&](MpuRegion r, Permission perm, bool on_lock) {
    r.perm = perm;
    r.activate_on_lock = on_lock;
    r.enabled = !on_lock;
    stack.push_back(r);
  };
  auto assign_overlays = [&](const std::vector<AddrRange>& ranges, const std::string& what) {
    int count = std::max<int>(1, int(ranges.size()));
    int first = next - count + 1;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      MpuRegion r = need_exact(ranges[i], what);
      r.number = std::uint8_t(first + int(i));
      push(r, Permission::ro_xn(), true);
    }
    next -= count;
  };
  bool ram = scenario == Scenario::ExecuteFromRam;
  assign_overlays(flash_sensitive, ram ? "Code (sensitive, flash)" : "Code (sensitive)");
  {
    MpuRegion code = need_exact(map.flash, ram ? "Code (other, flash)" : "Code (other)");
    code.number = std::uint8_t(next--);
    push(code, Permission::ro_x(), false);
  }
  if (ram) {
    assign_overlays(ram_sensitive, "Code (sensitive, RAM)");
    MpuRegion code = need_exact(map.ram_code_or_default(), "Code (other, RAM)");
    code.number = std::uint8_t(next--);
    // Boot copies code here and runs init routines from it, so the region is writable until lock.
    push(code, Permission::ro_x(), false);
    stack.back().until_lock = Permission{true, true, true};
  }
  if (options.merge_scb_mpu) {
    std::uint64_t lo = std::min(map.scb.base, map.mpu_regs.base);
    std::uint64_t hi = std::max(map.scb.end(), map.mpu_regs.end());
    std::uint64_t size = std::max<std::uint64_t>(256, std::bit_ceil(hi - lo));
    MpuRegion r;
    r.base = std::uint32_t(lo & ~(size - 1));
    r.size = size;
    if (r.base + size < hi) {
      throw Error(ErrorCode::AlignmentUnsatisfiable, "SCB and MPU ranges cannot share one region");
    }
    std::uint64_t sub = size / 8;
    for (int i = 0; i < 8; ++i) {
      std::uint64_t s0 = r.base + std::uint64_t(i) * sub;
      bool used = (s0 < map.scb.end() && s0 + sub > map.scb.base) ||
                  (s0 < map.mpu_regs.end() && s0 + sub > map.mpu_regs.base);
      if (!used) r.subregion_disable |= std::uint8_t(1u << i);
    }
    r.description = "SCB + MPU";
    r.number = std::uint8_t(next--);
    push(r, Permission::ro_xn(), true);
  } else {
    MpuRegion mpu = need_exact(map.mpu_regs, "MPU");
    mpu.number = std::uint8_t(next--);
    push(mpu, Permission::ro_xn(), true);
    MpuRegion scb = need_exact(map.scb, "SCB");
    scb.number = std::uint8_t(next--);
    push(scb, Permission::ro_xn(), false);
  }
  MpuRegion def;
  def.number = 0;
  def.base = 0;
  def.size = kFourGiB;
  def.description = "Default";
  push(def, Permission::rw_xn(), false);

  std::sort(stack.begin(), stack.end(), [](const auto& a, const auto& b) { return a.number < b.number; });
  plan.regions = std::move(stack);
  return plan;
}

std::optional<Permission> lookup_permission(const MpuPlan& plan, std::uint32_t addr) {
  for (auto it = plan.regions.rbegin(); it != plan.regions.rend(); ++it) {
    const auto& r = *it;
    if (!r.enabled || !r.covers(addr)) continue;
    if (r.size >= 256 && r.subregion_disable) {
      std::uint64_t sub = (std::uint64_t(addr) - r.base) / (r.size / 8);
      if (r.subregion_disable & (1u << sub)) continue;
    }
    return !plan.locked && r.until_lock ? *r.until_lock : r.perm;
  }
  return std::nullopt;
}

Permission effective_permission(const MpuPlan& plan, std::uint32_t addr) {
  auto p = lookup_permission(plan, addr);
  if (!p) throw Error(ErrorCode::NoRegionFault, "no MPU region covers " + hex32(addr));
  return *p;
}

MpuPlan lock_mpu(MpuPlan plan) {
  if (plan.locked) throw Error(ErrorCode::AlreadyLocked, "MPU configuration is already locked");
  for (auto& r : plan.regions) {
    if (r.activate_on_lock) r.enabled = true;
  }
  plan.locked = true;
  return plan;
}

std::string format_size(std::uint64_t bytes) {
  if (bytes >= (1ull << 30) && bytes % (1ull << 30) == 0) return std::to_string(bytes >> 30) + " GB";
  if (bytes >= (1ull << 20) && bytes % (1ull << 20) == 0) return std::to_string(bytes >> 20) + " MB";
  if (bytes >= 1024 && bytes % 1024 == 0) return std::to_string(bytes >> 10) + " KB";
  return std::to_string(bytes) + " B";
}

std::string dump_plan(const MpuPlan& plan) {
  std::ostringstream os;
  os << "Region No. | Description | Perms. | Size\n";
  for (const auto& r : plan.regions) {
    std::uint64_t effective = r.size;
    if (r.subregion_disable) effective = r.size / 8 * std::uint64_t(8 - std::popcount(r.subregion_disable));
    os << int(r.number) << " | " << r.description << " | " << r.perm.to_string() << " | " << format_size(effective);
    if (r.subregion_disable) {
      os << " (" << format_size(r.size) << " region, SRD 0x" << std::hex << std::setw(2) << std::setfill('0')
         << int(r.subregion_disable) << std::dec << ")";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace uarmor::esp
