#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "uarmor/assembler.hpp"
#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"
#include "uarmor/gadgets.hpp"
#include "uarmor/pipeline.hpp"
#include "uarmor/report.hpp"
#include "uarmor/scenario.hpp"
#include "uarmor/sim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace uarmor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitExpectation = 1;
constexpr int kExitInput = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  out << text;
}

std::string input_beside(const std::string& source) {
  fs::path p(source);
  p.replace_extension(".in");
  return fs::exists(p) ? read_file(p.string()) : std::string{};
}

scramble::DiversificationSeed parse_seed(const std::string& hex, const std::string& what) {
  auto s = scramble::DiversificationSeed::from_hex(hex);
  if (!s) throw Error(ErrorCode::InvalidArgument, what + " must be 64 hex characters");
  return *s;
}

// Build options shared by build, diversify, simulate and bench.
// Precedence for each value: command-line flag, then UARMOR_SEED (seed only), then --config file.
struct BuildFlags {
  std::string config_file;
  std::string map_path;
  std::string ssp, canary, policy, urng, esp, scenario, seed, stubs;
  int max_stub = -1;

  void add_to(CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--config", config_file, "key = value file with defaults for these flags")
        ->check(CLI::ExistingFile);
    cmd->add_option("--map", map_path, "memory map file (default: built-in LM3S6965)")->check(CLI::ExistingFile);
    cmd->add_option("--ssp", ssp, "canary coverage")->check(CLI::IsMember({"off", "default", "all"}));
    cmd->add_option("--canary", canary, "canary style")->check(CLI::IsMember({"plain", "terminator"}));
    cmd->add_option("--policy", policy, "violation policy")
        ->check(CLI::IsMember({"passive", "fatal", "thread-restart", "restart", "shutdown"}));
    cmd->add_option("--urng", urng, "hardware-seeded generator")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--esp", esp, "MPU executable space protection")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--code-in", scenario, "memory the code executes from")->check(CLI::IsMember({"flash", "ram"}));
    if (with_seed) cmd->add_option("--seed", seed, "diversification seed, 64 hex characters");
    cmd->add_option("--stubs", stubs, "dead-code stub kind")->check(CLI::IsMember({"nop", "trap"}));
    cmd->add_option("--max-stub", max_stub, "maximum instructions per dead-code stub")->check(CLI::Range(0, 64));
  }

  std::map<std::string, std::string> file_values() const {
    if (config_file.empty()) return {};
    return Manifest::parse(read_file(config_file)).fields;
  }

  std::string pick(const std::string& flag, const std::map<std::string, std::string>& file, const std::string& key,
                   const char* env = nullptr) const {
    if (!flag.empty()) return flag;
    if (env) {
      if (const char* v = std::getenv(env); v && *v) return v;
    }
    auto it = file.find(key);
    return it == file.end() ? std::string{} : it->second;
  }

  std::string seed_text() const { return pick(seed, file_values(), "seed", "UARMOR_SEED"); }

  std::string resolved_map_path() const {
    auto f = file_values();
    auto m = pick(map_path, f, "map");
    return m == "builtin" ? std::string{} : m;
  }

  BuildConfig config(bool seed_required = false) const {
    const auto f = file_values();
    BuildConfig c;
    if (auto m = resolved_map_path(); !m.empty()) c.map = esp::MemoryMap::load(m);
    if (auto v = pick(ssp, f, "ssp"); !v.empty()) {
      auto mode = parse_ssp_mode(v);
      if (!mode) throw Error(ErrorCode::InvalidArgument, "bad ssp mode " + v);
      c.ssp = *mode;
    }
    if (auto v = pick(canary, f, "canary"); !v.empty()) c.canary.terminator_style = v == "terminator";
    if (auto v = pick(policy, f, "policy"); !v.empty()) {
      auto p = ssp::parse_policy(v);
      if (!p) throw Error(ErrorCode::InvalidArgument, "bad policy " + v);
      c.policy = *p;
    }
    // A canary needs a random source; the generator follows canary coverage unless set explicitly.
    c.urng = c.ssp != ssp::SspMode::Off;
    if (auto v = pick(urng, f, "urng"); !v.empty()) c.urng = v == "on";
    if (auto v = pick(esp, f, "esp"); !v.empty()) c.esp = v == "on";
    if (auto v = pick(scenario, f, "scenario"); !v.empty()) {
      c.scenario = v == "ram" ? esp::Scenario::ExecuteFromRam : esp::Scenario::ExecuteFromFlash;
    }
    if (auto v = pick(stubs, f, "diversify.stubs"); !v.empty()) {
      c.diversify.dead_code_kind = v == "trap" ? scramble::StubKind::Trap : scramble::StubKind::Nop;
    }
    if (max_stub >= 0) {
      c.diversify.max_stub_instructions = std::uint32_t(max_stub);
    } else if (auto v = pick("", f, "diversify.max_stub"); !v.empty()) {
      c.diversify.max_stub_instructions = std::uint32_t(std::stoul(v));
    }
    if (auto v = seed_text(); !v.empty() && v != "none") {
      c.seed = parse_seed(v, "seed");
    } else if (seed_required) {
      throw Error(ErrorCode::InvalidArgument, "a seed is required (--seed, UARMOR_SEED or the config file)");
    }
    return c;
  }
};

struct Built {
  BuildResult result;
  Manifest manifest;
};

Built build_source(const std::string& source, const BuildConfig& config, const std::string& map_path) {
  const std::string text = read_file(source);
  Built b{build(fw::assemble(text, source), config),
          Manifest::describe(config, source, text, map_path.empty() ? "builtin" : map_path)};
  return b;
}

void write_outputs(const std::string& out, const Built& b) {
  if (auto dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
  fw::write_image_file(out, b.result.image);
  write_file(out + ".sym", fw::symbol_map(b.result.image));
  write_file(out + ".manifest", b.manifest.to_text());
}

fw::FlatImage load_image_or_source(const std::string& path, const BuildConfig& config) {
  if (fs::path(path).extension() == ".s") return build(fw::assemble_file(path), config).image;
  return fw::read_image_file(path);
}

std::uint64_t parse_u64(const std::string& text) {
  auto v = parse_number(text);
  if (!v) throw Error(ErrorCode::InvalidArgument, "not a number: " + text);
  return *v;
}

// ---- build ----

int cmd_build(const std::string& source_arg, const std::string& out, const std::string& manifest_path,
              const BuildFlags& flags, bool verbose) {
  std::string source = source_arg;
  BuildConfig config;
  std::string map_path;
  if (!manifest_path.empty()) {
    auto m = Manifest::load(manifest_path);
    config = m.config();
    if (source.empty()) source = m.get("source");
    map_path = m.get("map") == "builtin" ? "" : m.get("map");
    if (read_file(source).empty() || sponge_digest(read_file(source)) != m.get("source.hash")) {
      throw Error(ErrorCode::InvalidArgument, "source " + source + " does not match the manifest's source.hash");
    }
  } else {
    config = flags.config();
    map_path = flags.resolved_map_path();
  }
  if (source.empty()) throw Error(ErrorCode::InvalidArgument, "no source given");
  auto b = build_source(source, config, map_path);
  if (verbose) {
    for (const auto& w : b.result.warnings) std::cerr << "warning: " << w << "\n";
  } else if (!b.result.warnings.empty()) {
    std::cerr << b.result.warnings.size() << " warnings (--verbose to list)\n";
  }
  write_outputs(out, b);
  std::cout << out << ": " << b.result.image.code.size() << " code bytes, " << b.result.image.data_size
            << " data bytes, manifest " << b.manifest.content_hash() << "\n";
  return kExitOk;
}

// ---- diversify ----

int cmd_diversify(const std::string& source, const std::string& out, const std::string& out_dir, unsigned variants,
                  const std::string& seed_base, unsigned jobs, const BuildFlags& flags) {
  const auto map_path = flags.resolved_map_path();
  if (variants == 0) {
    if (out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
    auto b = build_source(source, flags.config(true), map_path);
    write_outputs(out, b);
    std::cout << out << ": seed " << b.manifest.get("seed") << "\n";
    return kExitOk;
  }
  if (out_dir.empty()) throw Error(ErrorCode::InvalidArgument, "--out-dir is required with --variants");
  BuildFlags base_flags = flags;
  base_flags.seed = seed_base.empty() ? flags.seed_text() : seed_base;
  const BuildConfig base = base_flags.config(true);
  const auto text = read_file(source);
  const auto module = fw::assemble(text, source);
  fs::create_directories(out_dir);

  std::atomic<unsigned> next{0};
  std::vector<std::string> errors(variants);
  auto worker = [&] {
    for (unsigned i = next++; i < variants; i = next++) {
      try {
        BuildConfig c = base;
        c.seed = scramble::derive_variant_seed(*base.seed, i);
        Built b{build(module, c), Manifest::describe(c, source, text, map_path.empty() ? "builtin" : map_path)};
        char name[32];
        std::snprintf(name, sizeof name, "variant_%04u.img", i);
        write_outputs((fs::path(out_dir) / name).string(), b);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::max(1u, jobs); ++t) pool.emplace_back(worker);
  pool.clear();
  for (unsigned i = 0; i < variants; ++i) {
    if (!errors[i].empty()) throw Error(ErrorCode::InvalidArgument, "variant " + std::to_string(i) + ": " + errors[i]);
  }
  std::cout << variants << " variants written to " << out_dir << "\n";
  return kExitOk;
}

// ---- plan-mpu ----

int cmd_plan_mpu(const BuildFlags& flags, const std::string& image_path, bool merge, bool locked) {
  const auto config = flags.config();
  esp::MemoryMap map = config.map;
  if (!image_path.empty()) {
    auto image = fw::read_image_file(image_path);
    if (auto s = image.sensitive_section()) map.sensitive_ranges.push_back({s->first, s->second - s->first});
  }
  esp::PlanOptions options;
  options.merge_scb_mpu = merge;
  auto plan = esp::plan_mpu(map, config.scenario, options);
  if (locked) plan = esp::lock_mpu(plan);
  std::cout << esp::dump_plan(plan);
  return kExitOk;
}

// ---- simulate ----

json report_json(const sim::ScenarioReport& r) {
  json j;
  j["scenario"] = r.name;
  j["image"] = r.image;
  j["passed"] = r.passed();
  j["errors"] = r.errors;
  j["expectations"] = json::array();
  for (const auto& e : r.expectations) {
    j["expectations"].push_back({{"line", e.line}, {"text", e.text}, {"passed", e.passed}, {"detail", e.detail}});
  }
  j["metrics"] = {{"cycles", r.cycles}, {"boots", r.boots}, {"stop", r.stop ? sim::to_string(*r.stop) : "none"}};
  return j;
}

int cmd_simulate(const std::string& target, const std::vector<std::string>& scenarios, const BuildFlags& flags,
                 const std::string& input_file, const std::string& device_seed, const std::string& boot_seed,
                 std::uint64_t max_cycles, const std::string& summary_path, bool show_log) {
  json summary = json::array();
  int rc = kExitOk;
  if (!scenarios.empty()) {
    sim::ScenarioOptions options;
    if (!flags.policy.empty()) options.policy = ssp::parse_policy(flags.policy);
    for (const auto& path : scenarios) {
      auto report = sim::run_scenario(sim::Scenario::load(path), options);
      std::cout << report.to_text();
      if (show_log) {
        for (const auto& e : report.events) std::cout << e.to_string() << "\n";
      }
      summary.push_back(report_json(report));
      if (!report.passed()) rc = kExitExpectation;
    }
  } else {
    if (target.empty()) throw Error(ErrorCode::InvalidArgument, "give an image, a source or --scenario");
    auto image = load_image_or_source(target, flags.config());
    auto cfg = sim::SimConfig::for_image(image, flags.config().map);
    if (!flags.policy.empty()) cfg.policy = *ssp::parse_policy(flags.policy);
    cfg.input = input_file.empty() ? input_beside(target) : read_file(input_file);
    if (!device_seed.empty()) cfg.device_seed = parse_u64(device_seed);
    if (!boot_seed.empty()) cfg.boot_seed = parse_u64(boot_seed);
    sim::Machine m(image, cfg);
    m.boot();
    auto run = m.run(max_cycles);
    std::cout << m.output();
    if (show_log) std::cout << m.event_log();
    std::cerr << "stop " << sim::to_string(run.reason);
    if (m.halt_code()) std::cerr << " code " << *m.halt_code();
    std::cerr << " cycles " << (m.cycle() - m.main_start_cycle()) << "\n";
    summary.push_back({{"image", target},
                       {"stop", sim::to_string(run.reason)},
                       {"halt_code", m.halt_code() ? json(*m.halt_code()) : json(nullptr)},
                       {"cycles", m.cycle() - m.main_start_cycle()},
                       {"boots", m.boot_id() + 1},
                       {"canary", m.canary().value}});
    if (run.reason != sim::StopReason::Halted) rc = kExitExpectation;
  }
  if (!summary_path.empty()) write_file(summary_path, summary.dump(2) + "\n");
  return rc;
}

// ---- analyze-coverage ----

json survival_json(const std::string& set, const gadgets::SurvivalReport& r, unsigned depth) {
  return {{"kind", "survival"},
          {"set", set},
          {"variants", r.n_variants},
          {"depth", depth},
          {"harvested", r.harvested},
          {"distinct", r.holders.size()},
          {"avg", r.avg_survival},
          {"max", r.max_survival}};
}

gadgets::SurvivalRow survival_row(const json& j) {
  gadgets::SurvivalRow row;
  row.set = j.at("set").get<std::string>();
  row.report.n_variants = j.at("variants").get<std::uint32_t>();
  row.report.harvested = j.at("harvested").get<std::uint64_t>();
  row.report.avg_survival = j.at("avg").get<double>();
  row.report.max_survival = j.at("max").get<std::uint32_t>();
  return row;
}

constexpr const char* kSurvivalContext =
    "Reference worst case on the original Cortex-M3 build: 10.15% average and 21% maximum survival "
    "(qualitative context; not comparable to this instruction set).\n";

int cmd_analyze(const std::string& dir, unsigned depth, const std::string& out, const std::string& set_name,
                const std::string& json_path) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".img") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw Error(ErrorCode::InvalidArgument, dir + " holds fewer than two .img variants");
  std::vector<fw::FlatImage> variants;
  for (const auto& f : files) variants.push_back(fw::read_image_file(f));
  auto r = gadgets::survival(variants, depth);
  const std::string set = set_name.empty() ? fs::path(dir).filename().string() : set_name;
  std::string table = gadgets::format_survival_table({{set, r}}) + kSurvivalContext;
  std::cout << table;
  if (!out.empty()) write_file(out, table);
  if (!json_path.empty()) write_file(json_path, survival_json(set, r, depth).dump(2) + "\n");
  return kExitOk;
}

// ---- bench ----

json overhead_json(const std::string& component, const std::string& app, const sim::OverheadReport& r) {
  return {{"component", component},
          {"app", app},
          {"runs", r.runs},
          {"base_code", r.base_code},
          {"prot_code", r.prot_code},
          {"base_data", r.base_data},
          {"prot_data", r.prot_data},
          {"base_memory", r.base_memory},
          {"prot_memory", r.prot_memory},
          {"canary_stack_bound", r.canary_stack_bound},
          {"base_cycles", r.base_cycles},
          {"prot_cycles", r.prot_cycles},
          {"code", {r.code.app_pct, r.code.resource_pct}},
          {"data", {r.data.app_pct, r.data.resource_pct}},
          {"memory", {r.memory.app_pct, r.memory.resource_pct}},
          {"runtime", {r.runtime.app_pct, r.runtime.resource_pct}}};
}

report::OverheadRow overhead_row(const json& j) {
  report::OverheadRow row;
  row.app = j.at("app").get<std::string>();
  auto& r = row.overhead;
  r.runs = j.at("runs").get<unsigned>();
  r.base_code = j.at("base_code").get<std::uint32_t>();
  r.prot_code = j.at("prot_code").get<std::uint32_t>();
  r.base_data = j.at("base_data").get<std::uint32_t>();
  r.prot_data = j.at("prot_data").get<std::uint32_t>();
  r.base_memory = j.at("base_memory").get<std::uint32_t>();
  r.prot_memory = j.at("prot_memory").get<std::uint32_t>();
  r.canary_stack_bound = j.at("canary_stack_bound").get<std::uint32_t>();
  r.base_cycles = j.at("base_cycles").get<double>();
  r.prot_cycles = j.at("prot_cycles").get<double>();
  auto metric = [&](const char* key) { return sim::OverheadMetrics{j.at(key)[0].get<double>(), j.at(key)[1].get<double>()}; };
  r.code = metric("code");
  r.data = metric("data");
  r.memory = metric("memory");
  r.runtime = metric("runtime");
  return row;
}

const std::vector<std::pair<std::string, std::string>> kComponents = {
    {"uesp", "MPU executable space protection"},
    {"ussp", "Stack canaries"},
    {"urng", "Hardware-seeded generator"},
    {"uscramble", "Code diversification"}};

BuildConfig component_config(const std::string& component, const BuildConfig& base) {
  BuildConfig c;
  c.map = base.map;
  c.canary = base.canary;
  c.policy = base.policy;
  c.diversify = base.diversify;
  if (component == "uesp") c.esp = true;
  if (component == "ussp") c.ssp = ssp::SspMode::Default;
  if (component == "urng") c.urng = true;
  return c;
}

int cmd_bench(const std::vector<std::string>& sources, unsigned runs, unsigned variants, const BuildFlags& flags,
              const std::string& json_path) {
  const BuildConfig base = flags.config();
  const auto seed_base = base.seed ? *base.seed : *scramble::DiversificationSeed::from_hex(std::string(64, '0'));
  json results = {{"kind", "overhead"},
                  {"flash", base.map.flash.size},
                  {"sram", base.map.sram.size},
                  {"rows", json::array()}};
  std::map<std::string, std::vector<report::OverheadRow>> tables;
  for (const auto& source : sources) {
    const auto app = fs::path(source).stem().string();
    const auto module = fw::assemble_file(source);
    const auto input = input_beside(source);
    const auto plain = build(module, component_config("", base)).image;
    auto plain_cfg = sim::SimConfig::for_image(plain, base.map);
    plain_cfg.input = input;
    for (const auto& [component, title] : kComponents) {
      sim::OverheadReport r;
      if (component == "uscramble") {
        // Averaged over variants; only code size changes, so one run per variant suffices.
        std::vector<sim::OverheadReport> all;
        for (unsigned v = 0; v < variants; ++v) {
          auto c = component_config(component, base);
          c.seed = scramble::derive_variant_seed(seed_base, v);
          auto image = build(module, c).image;
          auto cfg = sim::SimConfig::for_image(image, base.map);
          cfg.input = input;
          all.push_back(sim::measure_overhead(plain, image, plain_cfg, cfg, 1));
        }
        r = all.front();
        double code_a = 0, code_r = 0, prot = 0;
        for (const auto& x : all) {
          code_a += x.code.app_pct;
          code_r += x.code.resource_pct;
          prot += x.prot_code;
        }
        r.code = {code_a / all.size(), code_r / all.size()};
        r.prot_code = std::uint32_t(prot / all.size());
      } else {
        auto image = build(module, component_config(component, base)).image;
        auto cfg = sim::SimConfig::for_image(image, base.map);
        cfg.input = input;
        r = sim::measure_overhead(plain, image, plain_cfg, cfg, runs);
      }
      tables[component].push_back({app, r});
      results["rows"].push_back(overhead_json(component, app, r));
    }
  }
  for (const auto& [component, title] : kComponents) {
    if (component == "uscramble") {
      std::cout << report::format_code_size_table(title + " (average of " + std::to_string(variants) + " variants)",
                                                  tables[component]);
    } else {
      std::cout << report::format_overhead_table(title, tables[component], double(base.map.sram.size));
    }
    std::cout << "\n";
  }
  if (!json_path.empty()) write_file(json_path, results.dump(2) + "\n");
  return kExitOk;
}

// ---- report ----

int cmd_report(const std::vector<std::string>& files) {
  std::vector<gadgets::SurvivalRow> survival;
  for (const auto& f : files) {
    auto j = json::parse(read_file(f));
    std::vector<json> records = j.is_array() ? j.get<std::vector<json>>() : std::vector<json>{j};
    for (const auto& rec : records) {
      const auto kind = rec.value("kind", "");
      if (kind == "survival") {
        survival.push_back(survival_row(rec));
      } else if (kind == "overhead") {
        std::map<std::string, std::vector<report::OverheadRow>> tables;
        for (const auto& row : rec.at("rows")) tables[row.at("component").get<std::string>()].push_back(overhead_row(row));
        for (const auto& [component, title] : kComponents) {
          if (!tables.count(component)) continue;
          if (component == "uscramble") {
            std::cout << report::format_code_size_table(title, tables[component]);
          } else {
            std::cout << report::format_overhead_table(title, tables[component], rec.at("sram").get<double>());
          }
          std::cout << "\n";
        }
      } else {
        throw Error(ErrorCode::ParseError, f + ": record without a known kind");
      }
    }
  }
  if (!survival.empty()) std::cout << gadgets::format_survival_table(survival) << kSurvivalContext;
  return kExitOk;
}

// ---- rng ----

int cmd_rng(const std::string& device_seed, const std::string& boot_seed, std::uint64_t bytes, const std::string& out,
            const std::string& mode, std::uint64_t threshold) {
  sim::SimConfig cfg;
  cfg.device_seed = parse_u64(device_seed);
  cfg.rng.reseed.mode = mode == "periodic" ? urng::ReseedMode::Periodic : urng::ReseedMode::Consistent;
  if (threshold) cfg.rng.reseed.threshold_bytes = std::uint32_t(threshold);
  auto state = sim::seed_generator(cfg, parse_u64(boot_seed));
  std::string data(bytes, '\0');
  for (std::uint64_t i = 0; i < bytes; i += 4) {
    std::uint8_t word[4];
    store_le32(word, state.rand32());
    for (std::uint64_t k = 0; k < 4 && i + k < bytes; ++k) data[i + k] = char(word[k]);
  }
  write_file(out, data);
  const auto& ledger = state.ledger();
  std::cout << out << ": " << bytes << " bytes, " << ledger.reseeds << " reseeds, " << ledger.total() / 1000
            << " bits credited\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uarmor: firmware hardening toolchain and simulator"};
  app.require_subcommand(1);

  std::string source, out, out_dir, manifest_path, image_path, input_file, device_seed = "1", boot_seed = "1";
  std::string summary_path, json_path, variants_dir, set_name, seed_base, rng_mode = "consistent";
  std::vector<std::string> scenarios, sources, files;
  unsigned variants = 0, depth = 5, runs = 25, jobs = std::max(1u, std::thread::hardware_concurrency());
  std::uint64_t max_cycles = 50000000, rng_bytes = 1 << 20, rng_threshold = 0;
  bool merge = false, locked = false, show_log = false, verbose = false;
  BuildFlags flags;

  auto* b = app.add_subcommand("build", "assemble, instrument, diversify and encode one source");
  b->add_option("source", source, "assembly source")->check(CLI::ExistingFile);
  b->add_option("-o,--out", out, "image path; .sym and .manifest are written beside it")->required();
  b->add_option("--from-manifest", manifest_path, "rebuild exactly what a manifest records")->check(CLI::ExistingFile);
  b->add_flag("-v,--verbose", verbose, "list build warnings");
  flags.add_to(b);

  auto* d = app.add_subcommand("diversify", "build diversified variants");
  d->add_option("source", source, "assembly source")->required()->check(CLI::ExistingFile);
  d->add_option("-o,--out", out, "image path for a single variant");
  d->add_option("--variants", variants, "number of variants to build");
  d->add_option("--seed-base", seed_base, "base seed; variant i uses sponge(base || i)");
  d->add_option("--out-dir", out_dir, "directory for variant_NNNN.img files");
  d->add_option("-j,--jobs", jobs, "parallel builds");
  flags.add_to(d);

  auto* p = app.add_subcommand("plan-mpu", "print the MPU region plan");
  p->add_option("--image", image_path, "take the sensitive range from this image")->check(CLI::ExistingFile);
  p->add_flag("--merge-scb-mpu", merge, "cover SCB and MPU registers with one region");
  p->add_flag("--locked", locked, "show the plan after lock");
  flags.add_to(p, false);

  auto* s = app.add_subcommand("simulate", "run an image, a source or attack scenarios");
  s->add_option("target", source, "image or .s source")->check(CLI::ExistingFile);
  s->add_option("--scenario", scenarios, "scenario scripts")->check(CLI::ExistingFile);
  s->add_option("--input-file", input_file, "console input")->check(CLI::ExistingFile);
  s->add_option("--device-seed", device_seed, "simulated device");
  s->add_option("--boot-seed", boot_seed, "simulated power-up");
  s->add_option("--max-cycles", max_cycles, "cycle budget");
  s->add_option("--summary", summary_path, "machine-readable summary (JSON)");
  s->add_flag("--log", show_log, "print the event log");
  flags.add_to(s);

  auto* a = app.add_subcommand("analyze-coverage", "gadget survival across a directory of variants");
  a->add_option("--variants-dir", variants_dir, "directory of .img variants")->required()->check(CLI::ExistingDirectory);
  a->add_option("--depth", depth, "maximum gadget length in instructions")->check(CLI::Range(1, 64));
  a->add_option("--out", out, "report path");
  a->add_option("--set", set_name, "row label (default: directory name)");
  a->add_option("--json", json_path, "record for `report`");

  auto* be = app.add_subcommand("bench", "overhead of each protection against the unprotected build");
  be->add_option("sources", sources, "assembly sources")->required()->check(CLI::ExistingFile);
  be->add_option("--runs", runs, "runs per measurement");
  be->add_option("--variants", variants, "diversified variants per program")->default_val(25);
  be->add_option("--json", json_path, "record for `report`");
  flags.add_to(be);

  auto* r = app.add_subcommand("report", "render overhead and survival tables from JSON records");
  r->add_option("files", files, "records from bench and analyze-coverage")->required()->check(CLI::ExistingFile);

  auto* g = app.add_subcommand("rng", "write generator output for a simulated device and boot");
  g->add_option("--device-seed", device_seed, "simulated device");
  g->add_option("--boot-seed", boot_seed, "simulated power-up");
  g->add_option("--bytes", rng_bytes, "output length");
  g->add_option("--out", out, "output file")->required();
  g->add_option("--mode", rng_mode, "reseed mode")->check(CLI::IsMember({"consistent", "periodic"}));
  g->add_option("--threshold", rng_threshold, "periodic reseed threshold in bytes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*b) return cmd_build(source, out, manifest_path, flags, verbose);
    if (*d) return cmd_diversify(source, out, out_dir, variants, seed_base, jobs, flags);
    if (*p) return cmd_plan_mpu(flags, image_path, merge, locked);
    if (*s) {
      return cmd_simulate(source, scenarios, flags, input_file, device_seed, boot_seed, max_cycles, summary_path,
                          show_log);
    }
    if (*a) return cmd_analyze(variants_dir, depth, out, set_name, json_path);
    if (*be) return cmd_bench(sources, runs, variants, flags, json_path);
    if (*r) return cmd_report(files);
    if (*g) return cmd_rng(device_seed, boot_seed, rng_bytes, out, rng_mode, rng_threshold);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
