// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "random_map.hpp"
#include "stats.hpp"
#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"
#include "uarmor/gadgets.hpp"
#include "uarmor/keccak.hpp"
#include "uarmor/scenario.hpp"
#include "uarmor/urng.hpp"

using namespace uarmor;
using namespace uarmor::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int number;
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 ----

Outcome keccak_vectors() {
  // Keccak-f[200] applied once and twice to the all-zero state, from the Keccak team's published intermediate values.
  const keccak::State once = {0x3C, 0x28, 0x26, 0x84, 0x1C, 0xB3, 0x5C, 0x17, 0x1E, 0xAA, 0xE9, 0xB8, 0x11,
                              0x13, 0x4C, 0xEA, 0xA3, 0x85, 0x2C, 0x69, 0xD2, 0xC5, 0xAB, 0xAF, 0xEA};
  const keccak::State twice = {0x1B, 0xEF, 0x68, 0x94, 0x92, 0xA8, 0xA5, 0x43, 0xA5, 0x99, 0x9F, 0xDB, 0x83,
                               0x4E, 0x31, 0x66, 0xA1, 0x4B, 0xE8, 0x27, 0xD9, 0x50, 0x40, 0x47, 0x9E};
  keccak::State s{};
  keccak::permute(s);
  bool ok1 = s == once;
  keccak::permute(s);
  bool ok2 = s == twice;
  return {ok1 && ok2, std::string("zero state x1 ") + (ok1 ? "match" : "MISMATCH") + ", x2 " + (ok2 ? "match" : "MISMATCH")};
}

// ---- 2 ----

Outcome seeding_bound() {
  urng::EntropyModel model;  // 5% density
  const std::size_t need = urng::min_suv_bytes(model, 256);
  std::vector<std::uint8_t> suv(640, 0xA5);
  bool accepts = false, rejects = false;
  try {
    urng::rng_init({}, suv, model);
    accepts = true;
  } catch (const Error&) {
  }
  suv.resize(639);
  try {
    urng::rng_init({}, suv, model);
  } catch (const Error& e) {
    rejects = e.code() == ErrorCode::InsufficientSeedEntropy;
  }
  return {need == 640 && accepts && rejects, "minimum " + std::to_string(need) + " B; 640 B " +
                                                 (accepts ? "accepted" : "REJECTED") + "; 639 B " +
                                                 (rejects ? "rejected" : "ACCEPTED")};
}

// ---- 3 ----

urng::RngState fresh_generator(const urng::RngConfig& config) {
  urng::EntropyModel model;
  auto suv = urng::SramDevice::manufacture(11, 4096).sample(12);
  return urng::rng_init(config, suv, model, urng::EntropySources::defaults(model, 13));
}

Outcome reseed_accounting() {
  auto consistent = fresh_generator({});
  while (consistent.ledger().output_bytes < 2048) consistent.rand32();
  const auto credited = consistent.ledger().reseed_credit;
  const bool c_ok = consistent.ledger().output_bytes == 2048 && credited >= 256000;

  urng::RngConfig pc;
  pc.reseed.mode = urng::ReseedMode::Periodic;
  pc.reseed.threshold_bytes = 4096;
  auto periodic = fresh_generator(pc);
  std::uint64_t fired_at = 0, counter_after = 1;
  bool early = false;
  while (periodic.ledger().output_bytes < 3 * 4096) {
    const auto before = periodic.reseed_events().size();
    periodic.rand32();
    if (periodic.reseed_events().size() != before && fired_at == 0) {
      fired_at = periodic.ledger().output_bytes;
      counter_after = periodic.reseed_counter();
    }
    if (fired_at == 0 && periodic.ledger().output_bytes < 4096 && !periodic.reseed_events().empty()) early = true;
  }
  const bool p_ok = !early && fired_at == 4096 && counter_after == 0 && periodic.reseed_events().size() == 3;
  return {c_ok && p_ok, "consistent: " + std::to_string(credited / 1000) + " bits credited after " +
                            std::to_string(consistent.ledger().output_bytes) + " B; periodic T=4 KiB: first reseed at " +
                            std::to_string(fired_at) + " B, counter " + std::to_string(counter_after) + ", " +
                            std::to_string(periodic.reseed_events().size()) + " reseeds in 12 KiB"};
}

// ---- 4 ----

struct Row {
  int number;
  const char* description;
  const char* perm;
  std::uint64_t size;
};

int plan_diff(const esp::MpuPlan& plan, const std::vector<Row>& rows) {
  int diffs = std::abs(int(plan.regions.size()) - int(rows.size()));
  for (std::size_t i = 0; i < std::min(plan.regions.size(), rows.size()); ++i) {
    const auto& r = plan.regions[i];
    diffs += r.number != rows[i].number;
    diffs += r.description != rows[i].description;
    diffs += r.perm.to_string() != rows[i].perm;
    diffs += r.size != rows[i].size;
  }
  return diffs;
}

Outcome mpu_tables() {
  // Sensitive code as laid out by the build: boot_verify and flash_program of the bootloader program.
  auto image = build(corpus_module("bootloader"), [] {
                 BuildConfig c;
                 c.esp = true;
                 return c;
               }()).image;
  auto sens = image.sensitive_section();
  if (!sens) return {false, "bootloader image has no sensitive section"};
  const std::uint64_t sens_size = sens->second - sens->first;
  // Smallest aligned power-of-two block that covers the section exactly, either whole or as a run of eighths.
  std::uint64_t covering = 0;
  for (std::uint64_t b = 32; b <= (1ull << 32) && !covering; b <<= 1) {
    const std::uint64_t base = sens->first & ~(b - 1);
    if (base + b < sens->second) continue;
    const bool whole = base == sens->first && b == sens_size;
    const bool eighths = b >= 256 && (sens->first - base) % (b / 8) == 0 && sens_size % (b / 8) == 0;
    if (whole || eighths) covering = b;
  }

  auto flash_map = esp::MemoryMap::lm3s6965();
  flash_map.sensitive_ranges = {{sens->first, sens_size}};
  auto table6 = esp::plan_mpu(flash_map, esp::Scenario::ExecuteFromFlash);
  const int d6 = plan_diff(table6, {{0, "Default", "RW + XN", 1ull << 32},
                                    {4, "SCB", "RO + XN", 64},
                                    {5, "MPU", "RO + XN", 64},
                                    {6, "Code (other)", "RO + X", 256 * 1024},
                                    {7, "Code (sensitive)", "RO + XN", covering}});

  auto ram_map = flash_map;
  ram_map.ram_code = esp::AddrRange{0x20008000, 0x8000};
  ram_map.sensitive_ranges.push_back({0x20008000 + sens->first, sens_size});
  auto table7 = esp::plan_mpu(ram_map, esp::Scenario::ExecuteFromRam);
  const int d7 = plan_diff(table7, {{0, "Default", "RW + XN", 1ull << 32},
                                    {2, "SCB", "RO + XN", 64},
                                    {3, "MPU", "RO + XN", 64},
                                    {4, "Code (other, RAM)", "RO + X", 32 * 1024},
                                    {5, "Code (sensitive, RAM)", "RO + XN", covering},
                                    {6, "Code (other, flash)", "RO + X", 256 * 1024},
                                    {7, "Code (sensitive, flash)", "RO + XN", covering}});
  return {d6 == 0 && d7 == 0, "flash table " + std::to_string(d6) + " diffs, RAM table " + std::to_string(d7) +
                                  " diffs; sensitive section " + std::to_string(sens_size) + " B in a " +
                                  std::to_string(covering) + " B region"};
}

// ---- 5 ----

Outcome write_xor_execute() {
  std::mt19937_64 gen(20261017);
  std::uint64_t probes = 0, violations = 0;
  for (int i = 0; i < 10; ++i) {
    const bool ram = i % 2 == 1;
    auto plan = esp::lock_mpu(
        esp::plan_mpu(random_map(gen, ram), ram ? esp::Scenario::ExecuteFromRam : esp::Scenario::ExecuteFromFlash));
    auto probe = [&](std::int64_t a) {
      if (a < 0 || a >= (std::int64_t(1) << 32)) return;
      auto p = esp::effective_permission(plan, std::uint32_t(a));
      ++probes;
      violations += p.write && p.execute;
    };
    for (const auto& r : plan.regions) {
      for (std::uint64_t edge : {std::uint64_t(r.base), std::uint64_t(r.base) + r.size}) {
        for (int d : {-1, 0, 1}) probe(std::int64_t(edge) + d);
      }
      if (r.subregion_disable) {
        for (int k = 0; k <= 8; ++k) {
          for (int d : {-1, 0, 1}) probe(std::int64_t(r.base) + std::int64_t(k * (r.size / 8)) + d);
        }
      }
    }
    for (int k = 0; k < 100000; ++k) probe(std::int64_t(gen() & 0xFFFFFFFFu));
  }
  return {violations == 0, std::to_string(violations) + " write+execute addresses in " + std::to_string(probes) +
                               " probes over 10 locked plans"};
}

// ---- 6 ----

bool in_order(const std::vector<sim::Event>& events, const std::vector<sim::EventKind>& kinds,
              const std::function<bool(const sim::Event&, std::size_t)>& extra = {}) {
  std::size_t k = 0;
  for (const auto& e : events) {
    if (k < kinds.size() && e.kind == kinds[k] && (!extra || extra(e, k))) ++k;
  }
  return k == kinds.size();
}

Outcome attack_suite() {
  using K = sim::EventKind;
  struct Check {
    const char* file;
    std::function<bool(const sim::ScenarioReport&)> effect;
  };
  auto memfault = [](sim::AccessKind access) {
    return [access](const sim::ScenarioReport& r) {
      return in_order(r.events, {K::MemFault}, [&](const sim::Event& e, std::size_t) { return e.access == access; });
    };
  };
  auto canary_then = [](std::vector<K> after) {
    after.insert(after.begin(), K::CanaryViolation);
    return [after](const sim::ScenarioReport& r) { return in_order(r.events, after); };
  };
  const std::vector<Check> checks = {
      {"code_injection.scn", memfault(sim::AccessKind::Fetch)},
      {"code_modification.scn", memfault(sim::AccessKind::Write)},
      {"ret2bootloader.scn", memfault(sim::AccessKind::Fetch)},
      {"mpu_rewrite.scn", memfault(sim::AccessKind::Write)},
      {"stack_smash_passive.scn", canary_then({K::Alert, K::Halt})},
      {"stack_smash_fatal.scn", canary_then({K::Alert, K::ThreadKilled})},
      {"stack_smash_thread_restart.scn",
       [](const sim::ScenarioReport& r) {
         return in_order(r.events, {K::CanaryViolation, K::Alert, K::ThreadRestarted, K::ThreadStart},
                         [](const sim::Event& e, std::size_t k) { return k != 2 || e.detail == "handler"; });
       }},
      {"stack_smash_restart.scn",
       [](const sim::ScenarioReport& r) {
         return in_order(r.events, {K::CanaryViolation, K::Alert, K::Reboot, K::Boot, K::Halt}) &&
                r.canaries.size() == 2 && r.canaries[0] != r.canaries[1];
       }},
      {"stack_smash_shutdown.scn", canary_then({K::Alert, K::Shutdown})},
  };
  int passed = 0;
  std::string failed;
  for (const auto& c : checks) {
    auto r = sim::run_scenario(sim::Scenario::load(source_path("scenarios/" + std::string(c.file))));
    if (r.passed() && c.effect(r)) {
      ++passed;
    } else {
      failed += std::string(" ") + c.file;
    }
  }
  return {passed == int(checks.size()),
          std::to_string(passed) + "/" + std::to_string(checks.size()) + " scenarios" +
              (failed.empty() ? "" : "; failed:" + failed)};
}

// ---- 7 ----

Outcome semantics_preservation() {
  int cases = 0, diffs = 0;
  std::string first;
  for (const auto& name : corpus_programs()) {
    const auto module = corpus_module(name);
    const auto input = corpus_input(name);
    auto plain = build(module, BuildConfig{}).image;
    auto want = run_image(plain, config_for(plain, input), 20000000);
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto image = build(module, BuildConfig::full(seed_of(1000 + s))).image;
      auto got = run_image(image, config_for(image, input), 20000000);
      ++cases;
      if (want.reason != sim::StopReason::Halted || got.output != want.output || got.halt_code != want.halt_code ||
          got.reason != want.reason) {
        ++diffs;
        if (first.empty()) first = "; first: " + name + " seed " + std::to_string(1000 + s);
      }
    }
  }
  return {cases == 500 && diffs == 0,
          std::to_string(corpus_programs().size()) + " programs x 20 seeds: " + std::to_string(cases) + " cases, " +
              std::to_string(diffs) + " diffs" + first};
}

// ---- 8 ----

Outcome reproducibility() {
  int images = 0, image_diffs = 0, log_diffs = 0;
  for (const auto& name : corpus_programs()) {
    const auto src = source_path("corpus/" + name + ".s");
    auto cfg = BuildConfig::full(seed_of(77 + std::uint64_t(images)));
    auto first = build(fw::assemble_file(src), cfg).image;
    auto manifest = Manifest::parse(Manifest::describe(cfg, src, slurp(src), "builtin").to_text());
    auto again = build(fw::assemble_file(manifest.get("source")), manifest.config()).image;
    ++images;
    image_diffs += fw::serialize(first) != fw::serialize(again);
    auto sc = config_for(first, corpus_input(name));
    sim::Machine a(first, sc), b(again, sc);
    a.boot();
    b.boot();
    a.run(20000000);
    b.run(20000000);
    log_diffs += a.event_log() != b.event_log() || a.output() != b.output();
  }
  return {images == 25 && image_diffs == 0 && log_diffs == 0,
          std::to_string(images) + " manifests: " + std::to_string(image_diffs) + " image diffs, " +
              std::to_string(log_diffs) + " event-log diffs"};
}

// ---- 9 ----

Outcome overhead_envelopes() {
  const double flash = double(esp::MemoryMap::lm3s6965().flash.size);
  int protected_fns = 0, bad_fn = 0;
  double worst_ssp = 0, worst_scramble = 0;
  std::uint32_t rng_min = ~0u, rng_max = 0;
  int esp_nonzero = 0;
  std::string note;
  for (const auto& name : corpus_programs()) {
    const auto module = corpus_module(name);
    const auto input = corpus_input(name);
    BuildConfig plain_cfg;
    auto plain = build(module, plain_cfg).image;

    BuildConfig ssp_cfg;
    ssp_cfg.ssp = ssp::SspMode::Default;
    auto with_ssp = build(module, ssp_cfg);
    const auto before = plain.function_ranges();
    for (const auto& [fn, range] : with_ssp.image.function_ranges()) {
      auto it = before.find(fn);
      if (it == before.end()) continue;  // runtime support added by the pass
      const auto grow = (range.second - range.first) - (it->second.second - it->second.first);
      const auto* def = with_ssp.module.find(fn);
      const bool is_protected = def && def->protected_by_ssp;
      if (is_protected) {
        ++protected_fns;
        if (grow != 36) ++bad_fn;
      } else if (grow != 0) {
        ++bad_fn;
      }
      if ((is_protected && grow != 36) || (!is_protected && grow != 0)) {
        if (note.empty()) note = "; e.g. " + name + "." + fn + " grew " + std::to_string(grow) + " B";
      }
    }
    worst_ssp = std::max(worst_ssp, 100.0 * (double(with_ssp.image.code.size()) - double(plain.code.size())) / flash);

    for (std::uint64_t s = 0; s < 25; ++s) {
      BuildConfig sc;
      sc.seed = seed_of(500 + s);
      sc.diversify.max_stub_instructions = 4;
      auto v = build(module, sc).image;
      worst_scramble = std::max(worst_scramble, 100.0 * (double(v.code.size()) - double(plain.code.size())) / flash);
    }

    BuildConfig rng_cfg;
    rng_cfg.urng = true;
    auto with_rng = build(module, rng_cfg).image;
    auto rr = sim::measure_overhead(plain, with_rng, config_for(plain, input), config_for(with_rng, input), 1);
    const auto rng_bytes = rr.prot_data - rr.base_data;
    rng_min = std::min(rng_min, rng_bytes);
    rng_max = std::max(rng_max, rng_bytes);

    BuildConfig esp_cfg;
    esp_cfg.esp = true;
    auto with_esp = build(module, esp_cfg).image;
    auto er = sim::measure_overhead(plain, with_esp, config_for(plain, input), config_for(with_esp, input), 25);
    if (er.runtime.app_pct != 0.0) {
      ++esp_nonzero;
      if (note.empty()) note = "; ESP runtime nonzero on " + name;
    }
  }
  const bool ok = protected_fns > 0 && bad_fn == 0 && worst_ssp <= 5.0 && worst_scramble <= 5.0 && rng_min >= 44 &&
                  rng_max <= 60 && esp_nonzero == 0;
  return {ok, std::to_string(protected_fns) + " protected functions, " + std::to_string(bad_fn) +
                  " not +36 B; code wrt flash: canaries max " + fmt("%.2f%%", worst_ssp) + ", diversification max " +
                  fmt("%.2f%%", worst_scramble) + "; generator state " + std::to_string(rng_min) + ".." +
                  std::to_string(rng_max) + " B; ESP-only runtime overhead nonzero on " + std::to_string(esp_nonzero) +
                  " programs" + note};
}

// ---- 10 ----

fw::FlatImage shifted(const fw::FlatImage& image, std::size_t words) {
  fw::FlatImage out = image;
  out.code.assign(4 * words, 0xFF);
  out.code.insert(out.code.end(), image.code.begin(), image.code.end());
  return out;
}

Outcome survival_sanity(std::string& table) {
  const auto module = corpus_module("dispatch30");
  if (module.functions.size() < 30) return {false, "dispatch30 has fewer than 30 functions"};
  auto plain = build(module, BuildConfig{}).image;

  auto dup = gadgets::survival(std::vector<fw::FlatImage>(10, plain));
  std::vector<fw::FlatImage> disjoint;
  for (std::size_t k = 0; k < 10; ++k) disjoint.push_back(shifted(plain, k * plain.code.size() / 4));
  auto dis = gadgets::survival(disjoint);

  std::vector<fw::FlatImage> variants;
  const auto base = seed_of(2026);
  for (std::uint32_t i = 0; i < 200; ++i) {
    auto c = BuildConfig::full(scramble::derive_variant_seed(base, i));
    variants.push_back(build(module, c).image);
  }
  auto div = gadgets::survival(variants);
  table = gadgets::format_survival_table({{"duplicate x10", dup}, {"disjoint x10", dis}, {"dispatch30 x200", div}});
  table += "Reference worst case on the original Cortex-M3 build: 10.15% average and 21% maximum survival "
           "(qualitative context only).\n";
  const bool ok = dup.avg_fraction() == 1.0 && dup.max_fraction() == 1.0 && dis.max_survival == 0 &&
                  dis.avg_survival == 0.0 && div.avg_survival < double(div.max_survival) && div.max_fraction() < 1.0 &&
                  div.avg_fraction() < 1.0;
  return {ok, "duplicate " + fmt("%.0f%%", 100 * dup.avg_fraction()) + ", disjoint " +
                  fmt("%.0f%%", 100 * dis.max_fraction()) + ", 200 variants avg " +
                  fmt("%.2f%%", 100 * div.avg_fraction()) + " < max " + fmt("%.2f%%", 100 * div.max_fraction())};
}

// ---- 11 ----

Outcome rng_statistics() {
  sim::SimConfig cfg;
  cfg.device_seed = 31;
  auto rng = sim::seed_generator(cfg, 32);
  std::vector<std::uint8_t> out;
  out.reserve(1 << 20);
  while (out.size() < (1u << 20)) {
    std::uint8_t w[4];
    store_le32(w, rng.rand32());
    out.insert(out.end(), w, w + 4);
  }
  const double mono = monobit_p(out), runs = runs_p(out);
  return {mono >= 0.01 && runs >= 0.01, "1 MiB: monobit p=" + fmt("%.4f", mono) + ", runs p=" + fmt("%.4f", runs)};
}

}  // namespace

int main() {
  std::string survival_table;
  const std::vector<Criterion> criteria = {
      {1, "Keccak-f[200] reference vectors", 1, keccak_vectors},
      {2, "generator seeding bound at 640 B", 1, seeding_bound},
      {3, "reseed accounting", 1, reseed_accounting},
      {4, "MPU plan tables", 1, mpu_tables},
      {5, "W^X over randomized locked plans", 10, write_xor_execute},
      {6, "attack scenario suite", 30, attack_suite},
      {7, "semantics preservation", 120, semantics_preservation},
      {8, "manifest reproducibility", 30, reproducibility},
      {9, "overhead envelopes", 120, overhead_envelopes},
      {10, "gadget survival", 300, [&] { return survival_sanity(survival_table); }},
      {11, "generator statistical smoke", 10, rng_statistics},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s <= c.limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s %2d %-36s %8.3f s / %g s  %s%s\n", pass ? "PASS" : "FAIL", c.number, c.name.c_str(), s, c.limit_s,
                o.detail.c_str(), in_time ? "" : " [over time limit]");
    std::fflush(stdout);
  }
  if (!survival_table.empty()) std::printf("\n%s", survival_table.c_str());
  std::printf("\n%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures;
}
