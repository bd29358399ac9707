#include "uarmor/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"
#include "uarmor/keccak.hpp"
#include "uarmor/urng.hpp"

namespace uarmor {

BuildConfig BuildConfig::full(const scramble::DiversificationSeed& seed) {
  BuildConfig c;
  c.ssp = ssp::SspMode::Default;
  c.urng = true;
  c.esp = true;
  c.seed = seed;
  return c;
}

fw::LayoutOptions layout_for(const BuildConfig& config) {
  fw::LayoutOptions o;
  const bool ram = config.scenario == esp::Scenario::ExecuteFromRam;
  if (ram) {
    const auto rc = config.map.ram_code_or_default();
    o.flash_base = rc.base;
    o.flash_size = std::uint32_t(rc.size);
  } else {
    o.flash_base = config.map.flash.base;
    o.flash_size = std::uint32_t(config.map.flash.size);
  }
  o.data_base = config.map.sram.base + config.stack_slots * config.stack_size;
  o.align_sensitive = config.esp;
  std::uint32_t flags = 0;
  if (config.ssp != ssp::SspMode::Off) flags |= fw::kImageSsp;
  if (config.urng) flags |= fw::kImageUrng;
  if (config.esp) flags |= fw::kImageEsp;
  if (config.canary.terminator_style) flags |= fw::kImageTerminatorCanary;
  if (ram) flags |= fw::kImageRamScenario;
  flags |= std::uint32_t(config.policy) << fw::kImagePolicyShift;
  o.flags = flags;
  return o;
}

BuildResult build(fw::FirmwareModule module, const BuildConfig& config) {
  BuildResult out;
  if (config.esp && !module.find(fw::kLockStub)) module.functions.push_back(fw::make_lock_stub());
  if (config.urng) fw::ensure_global(module, fw::kRngStateSymbol, urng::kControlBlockBytes, false);
  module = ssp::protect_module(std::move(module), config.ssp, config.canary, &out.warnings);
  if (config.seed) module = scramble::diversify(std::move(module), *config.seed, config.diversify, &out.warnings);
  out.image = fw::encode(module, layout_for(config));
  out.module = std::move(module);
  return out;
}

std::string to_string(ssp::SspMode m) {
  switch (m) {
    case ssp::SspMode::Off: return "off";
    case ssp::SspMode::Default: return "default";
    case ssp::SspMode::All: return "all";
  }
  return "?";
}

std::optional<ssp::SspMode> parse_ssp_mode(const std::string& text) {
  if (text == "off") return ssp::SspMode::Off;
  if (text == "default") return ssp::SspMode::Default;
  if (text == "all") return ssp::SspMode::All;
  return std::nullopt;
}

std::string sponge_digest(std::string_view data, std::size_t bytes) {
  keccak::Sponge s;
  s.absorb({reinterpret_cast<const std::uint8_t*>(data.data()), data.size()});
  std::vector<std::uint8_t> out(bytes);
  s.squeeze(out);
  return to_hex(out);
}

namespace {

const char* bool_text(bool b) { return b ? "on" : "off"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw Error(ErrorCode::ParseError, "manifest field " + key + " must be on or off");
}

}  // namespace

Manifest Manifest::describe(const BuildConfig& c, const std::string& source_path, const std::string& source_text,
                            const std::string& map_path) {
  Manifest m;
  auto& f = m.fields;
  f["source"] = source_path;
  f["source.hash"] = sponge_digest(source_text);
  f["map"] = map_path;
  f["map.hash"] = sponge_digest(c.map.to_text());
  f["ssp"] = to_string(c.ssp);
  f["ssp.coverage"] = c.ssp == ssp::SspMode::All ? "all functions"
                      : c.ssp == ssp::SspMode::Default
                          ? "buffers >= " + std::to_string(c.canary.protect_threshold_buffer_bytes) + " bytes"
                          : "none";
  f["ssp.threshold"] = std::to_string(c.canary.protect_threshold_buffer_bytes);
  f["canary"] = c.canary.terminator_style ? "terminator" : "plain";
  f["policy"] = ssp::to_string(c.policy);
  f["urng"] = bool_text(c.urng);
  f["esp"] = bool_text(c.esp);
  f["scenario"] = c.scenario == esp::Scenario::ExecuteFromRam ? "ram" : "flash";
  f["seed"] = c.seed ? c.seed->hex() : "none";
  f["diversify.reg"] = bool_text(c.diversify.enable_reg_reorder);
  f["diversify.dead"] = bool_text(c.diversify.enable_dead_code);
  f["diversify.stubs"] = c.diversify.dead_code_kind == scramble::StubKind::Trap ? "trap" : "nop";
  f["diversify.max_stub"] = std::to_string(c.diversify.max_stub_instructions);
  f["diversify.func"] = bool_text(c.diversify.enable_func_reorder);
  f["stack.slots"] = std::to_string(c.stack_slots);
  f["stack.size"] = std::to_string(c.stack_size);
  return m;
}

namespace {

std::string manifest_body(const std::map<std::string, std::string>& fields) {
  std::ostringstream os;
  for (const auto& [k, v] : fields) {
    if (k != "manifest.hash") os << k << " = " << v << "\n";
  }
  return os.str();
}

}  // namespace

std::string Manifest::to_text() const { return manifest_body(fields) + "manifest.hash = " + content_hash() + "\n"; }

std::string Manifest::content_hash() const { return sponge_digest(manifest_body(fields)); }

Manifest Manifest::parse(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(n) + ": expected key = value");
    m.fields[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto it = m.fields.find("manifest.hash");
  if (it != m.fields.end() && it->second != m.content_hash()) {
    throw Error(ErrorCode::ParseError, "manifest content hash mismatch");
  }
  return m;
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& Manifest::get(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) throw Error(ErrorCode::ParseError, "manifest lacks " + key);
  return it->second;
}

BuildConfig Manifest::config() const {
  BuildConfig c;
  auto ssp_mode = parse_ssp_mode(get("ssp"));
  if (!ssp_mode) throw Error(ErrorCode::ParseError, "bad ssp mode in manifest");
  c.ssp = *ssp_mode;
  auto threshold = parse_number(get("ssp.threshold"));
  if (!threshold) throw Error(ErrorCode::ParseError, "bad ssp.threshold in manifest");
  c.canary.protect_threshold_buffer_bytes = std::uint32_t(*threshold);
  c.canary.terminator_style = get("canary") == "terminator";
  auto policy = ssp::parse_policy(get("policy"));
  if (!policy) throw Error(ErrorCode::ParseError, "bad policy in manifest");
  c.policy = *policy;
  c.urng = parse_bool("urng", get("urng"));
  c.esp = parse_bool("esp", get("esp"));
  c.scenario = get("scenario") == "ram" ? esp::Scenario::ExecuteFromRam : esp::Scenario::ExecuteFromFlash;
  if (get("seed") != "none") {
    auto s = scramble::DiversificationSeed::from_hex(get("seed"));
    if (!s) throw Error(ErrorCode::ParseError, "bad seed in manifest");
    c.seed = *s;
  }
  c.diversify.enable_reg_reorder = parse_bool("diversify.reg", get("diversify.reg"));
  c.diversify.enable_dead_code = parse_bool("diversify.dead", get("diversify.dead"));
  c.diversify.dead_code_kind = get("diversify.stubs") == "trap" ? scramble::StubKind::Trap : scramble::StubKind::Nop;
  auto max_stub = parse_number(get("diversify.max_stub"));
  if (!max_stub) throw Error(ErrorCode::ParseError, "bad diversify.max_stub in manifest");
  c.diversify.max_stub_instructions = std::uint32_t(*max_stub);
  c.diversify.enable_func_reorder = parse_bool("diversify.func", get("diversify.func"));
  auto slots = parse_number(get("stack.slots"));
  auto size = parse_number(get("stack.size"));
  if (!slots || !size) throw Error(ErrorCode::ParseError, "bad stack layout in manifest");
  c.stack_slots = std::uint32_t(*slots);
  c.stack_size = std::uint32_t(*size);
  if (!get("map").empty() && get("map") != "builtin") c.map = esp::MemoryMap::load(get("map"));
  if (sponge_digest(c.map.to_text()) != get("map.hash")) {
    throw Error(ErrorCode::ParseError, "memory map does not match the manifest's map.hash");
  }
  return c;
}

}  // namespace uarmor
