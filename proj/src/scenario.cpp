#include "uarmor/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "uarmor/assembler.hpp"
#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"

namespace uarmor::sim {

namespace {

namespace fsys = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Splits on whitespace; a double-quoted token keeps its spaces and C-style \n, \t, \\ and \" escapes.
std::vector<std::string> tokenize(const std::string& line, int line_no) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    if (line[i] == '#') break;
    std::string tok;
    if (line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        char c = line[i++];
        if (c == '"') {
          closed = true;
          break;
        }
        if (c == '\\' && i < line.size()) {
          char e = line[i++];
          tok += e == 'n' ? '\n' : e == 't' ? '\t' : e;
        } else {
          tok += c;
        }
      }
      if (!closed) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unterminated string");
    } else {
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) tok += line[i++];
    }
    out.push_back(tok);
  }
  return out;
}

struct Option {
  std::string key, value;
};

std::optional<Option> split_option(const std::string& tok) {
  auto eq = tok.find('=');
  if (eq == std::string::npos || eq == 0) return std::nullopt;
  return Option{tok.substr(0, eq), tok.substr(eq + 1)};
}

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "1" || v == "true") return true;
  if (v == "off" || v == "0" || v == "false") return false;
  throw Error(ErrorCode::InvalidArgument, key + " must be on or off");
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::uppercase << v;
  return os.str();
}

class Runner {
 public:
  Runner(const Scenario& s, const ScenarioOptions& o) : scenario_(s), options_(o) {
    report_.name = s.name;
    if (!s.path.empty()) base_ = fsys::path(s.path).parent_path();
  }

  ScenarioReport run() {
    for (const auto& step : scenario_.steps) {
      try {
        exec(step);
      } catch (const std::exception& e) {
        report_.errors.push_back("line " + std::to_string(step.line) + ": " + e.what());
        if (step.command == "expect") {
          report_.expectations.push_back({step.line, step.text(), false, e.what()});
        }
        // A failed load or boot leaves nothing to run against.
        if (step.command == "load" || step.command == "boot") break;
      }
    }
    if (machine_) {
      report_.events = machine_->events();
      report_.output = machine_->output();
      report_.cycles = machine_->cycle();
      report_.boots = machine_->boot_id() + 1;
      report_.stop = machine_->stop_reason();
      for (const auto& c : machine_->canary_history()) report_.canaries.push_back(c.value);
    }
    return std::move(report_);
  }

 private:
  std::string resolve(const std::string& p) const {
    fsys::path path(p);
    if (path.is_absolute() || base_.empty()) return p;
    fsys::path rel = base_ / path;
    if (fsys::exists(rel)) return rel.string();
    return p;
  }

  void exec(const ScenarioStep& step) {
    const auto& c = step.command;
    const auto& a = step.args;
    if (c == "load") return load(a);
    if (c == "input") {
      need(a.size() == 1, "input takes one quoted string");
      input_ = a[0];
      return;
    }
    if (c == "input-file") {
      need(a.size() == 1, "input-file takes a path");
      input_ = read_text(resolve(a[0]));
      return;
    }
    if (c == "device" || c == "boot-seed") {
      need(a.size() == 1, c + " takes a number");
      auto n = parse_number(a[0]);
      need(n.has_value(), "bad number " + a[0]);
      (c == "device" ? device_seed_ : boot_seed_) = *n;
      return;
    }
    if (c == "boot") return ensure_booted();
    if (c == "run") {
      ensure_booted();
      std::uint64_t limit = options_.default_run_cycles;
      if (!a.empty()) limit = number(a[0]);
      machine_->run(limit);
      return;
    }
    if (c == "until") return until(a);
    if (c == "inject") {
      need(a.size() == 2, "inject takes a target and hex bytes");
      ensure_booted();
      auto bytes = from_hex(a[1]);
      need(bytes.has_value(), "bad hex payload");
      machine_->attacker_write(victim_thread(), address(a[0]), *bytes);
      return;
    }
    if (c == "overflow") return overflow(a);
    if (c == "call") {
      need(!a.empty() && a.size() <= 2, "call takes a target and an optional thread=N");
      ensure_booted();
      int tid = a.size() == 2 ? thread_option(a[1]) : victim_thread();
      need(machine_->thread(tid) != nullptr, "no thread " + std::to_string(tid));
      machine_->set_pc(tid, address(a[0]));
      return;
    }
    if (c == "reg") {
      need(a.size() == 2 || a.size() == 3, "reg takes a register, a value and an optional thread=N");
      ensure_booted();
      int tid = a.size() == 3 ? thread_option(a[2]) : victim_thread();
      need(machine_->thread(tid) != nullptr, "no thread " + std::to_string(tid));
      machine_->set_reg(tid, reg_index(a[0]), address(a[1]));
      return;
    }
    if (c == "expect") {
      report_.expectations.push_back(expect(step));
      return;
    }
    throw Error(ErrorCode::ParseError, "unknown command " + c);
  }

  static void need(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
  }

  static std::uint64_t number(const std::string& s) {
    auto n = parse_number(s);
    need(n.has_value(), "bad number " + s);
    return *n;
  }

  int thread_option(const std::string& tok) const {
    auto o = split_option(tok);
    need(o && o->key == "thread", "expected thread=N");
    return int(number(o->value));
  }

  static int reg_index(const std::string& r) {
    if (r == "sp") return fw::kSp;
    if (r == "lr") return fw::kLr;
    if (r == "pc") return fw::kPc;
    need(r.size() >= 2 && r[0] == 'r', "bad register " + r);
    auto n = parse_number(r.substr(1));
    need(n && *n <= 15, "bad register " + r);
    return int(*n);
  }

  // The first application thread of the current boot.
  int victim_thread() const {
    for (const auto& t : machine_->threads()) {
      if (t.state == ThreadState::Ready) return t.id;
    }
    return machine_->threads().empty() ? 0 : machine_->threads().front().id;
  }

  std::uint32_t address(const std::string& target) const {
    if (auto n = parse_number(target)) return std::uint32_t(*n);
    std::string name = target;
    std::int64_t addend = 0;
    if (auto plus = target.find('+'); plus != std::string::npos) {
      name = target.substr(0, plus);
      addend = std::int64_t(number(target.substr(plus + 1)));
    }
    const auto& img = machine_ ? machine_->image() : *image_;
    auto s = img.symbol(name);
    need(s.has_value(), "unknown symbol " + name);
    return std::uint32_t(std::int64_t(*s) + addend);
  }

  void load(const std::vector<std::string>& a) {
    need(!a.empty(), "load takes a path");
    need(!image_, "only one load per scenario");
    std::string path = resolve(a[0]);
    std::vector<std::string> opts(a.begin() + 1, a.end());
    for (auto& o : opts) {
      if (o.starts_with("map=")) o = "map=" + resolve(o.substr(4));
    }
    if (path.ends_with(".s")) {
      BuildConfig cfg = scenario_build_config(opts);
      if (options_.policy) cfg.policy = *options_.policy;
      auto built = build(fw::assemble_file(path), cfg);
      module_ = built.module;
      image_ = built.image;
      map_ = cfg.map;
      report_.image = a[0] + " ssp=" + uarmor::to_string(cfg.ssp) + " policy=" + ssp::to_string(cfg.policy) +
                      " urng=" + (cfg.urng ? "on" : "off") + " esp=" + (cfg.esp ? "on" : "off") +
                      (cfg.seed ? " seed=" + cfg.seed->hex() : "");
      std::string in = path.substr(0, path.size() - 2) + ".in";
      if (fsys::exists(in)) input_ = read_text(in);
    } else {
      need(opts.empty() || (opts.size() == 1 && opts[0].starts_with("map=")), "images only take map=");
      image_ = fw::read_image_file(path);
      if (!opts.empty()) map_ = esp::MemoryMap::load(opts[0].substr(4));
      report_.image = a[0];
    }
  }

  void ensure_booted() {
    if (machine_) return;
    need(image_.has_value(), "no image loaded");
    SimConfig cfg = SimConfig::for_image(*image_, map_);
    if (options_.policy) cfg.policy = *options_.policy;
    cfg.device_seed = device_seed_;
    cfg.boot_seed = boot_seed_;
    cfg.input = input_;
    machine_ = std::make_unique<Machine>(*image_, cfg);
    machine_->boot();
  }

  void until(const std::vector<std::string>& a) {
    need(!a.empty() && a.size() <= 2, "until takes a target and an optional cycle limit");
    ensure_booted();
    std::uint32_t pc = address(a[0]);
    std::uint64_t limit = a.size() == 2 ? number(a[1]) : options_.default_run_cycles;
    bool hit = false;
    machine_->add_breakpoint(pc, [&hit](Machine& m, Thread&) {
      hit = true;
      m.pause();
    });
    machine_->run(limit);
    need(hit, "target " + a[0] + " not reached");
  }

  void overflow(const std::vector<std::string>& a) {
    need(a.size() == 2, "overflow takes <func>.<buffer> and hex bytes");
    need(module_.has_value(), "overflow needs a source load (frame layouts come from the build)");
    auto dot = a[0].find('.');
    need(dot != std::string::npos, "expected <func>.<buffer>");
    std::string fn = a[0].substr(0, dot), buf = a[0].substr(dot + 1);
    const auto* f = module_->find(fn);
    need(f != nullptr, "unknown function " + fn);
    const auto* local = f->find_local(buf);
    need(local != nullptr, "unknown local " + buf + " in " + fn);
    auto bytes = from_hex(a[1]);
    need(bytes.has_value(), "bad hex payload");
    ensure_booted();
    const auto* sym = machine_->image().find(fn, fw::SymbolKind::Function);
    need(sym != nullptr, "function " + fn + " missing from image");
    const std::int32_t offset = local->offset;
    auto payload = *bytes;
    machine_->add_breakpoint(sym->aux, [offset, payload](Machine& m, Thread& t) {
      m.attacker_write(t.id, t.regs[fw::kSp] + std::uint32_t(offset), payload);
    });
  }

  // Matches "key=value" options against an event.
  bool matches(const Event& e, const std::vector<Option>& opts, std::string& why) const {
    for (const auto& o : opts) {
      if (o.key == "access") {
        if (to_string(e.access) != o.value) return why = "access", false;
      } else if (o.key == "addr") {
        if (e.addr != address(o.value)) return why = "addr", false;
      } else if (o.key == "pc") {
        if (e.pc != address(o.value)) return why = "pc", false;
      } else if (o.key == "in") {
        const auto* s = machine_->image().find(o.value, fw::SymbolKind::Function);
        need(s != nullptr, "unknown function " + o.value);
        if (e.pc < s->start || e.pc >= s->end) return why = "pc range", false;
      } else if (o.key == "code") {
        if (e.code != number(o.value)) return why = "code", false;
      } else if (o.key == "thread") {
        if (e.thread != int(number(o.value))) return why = "thread", false;
      } else if (o.key == "boot") {
        if (e.boot_id != number(o.value)) return why = "boot", false;
      } else if (e.detail.find(o.key + "=" + o.value) == std::string::npos) {
        return why = o.key, false;
      }
    }
    return true;
  }

  ExpectationResult expect(const ScenarioStep& step) {
    ExpectationResult r{step.line, step.text(), false, {}};
    const auto& a = step.args;
    need(!a.empty(), "expect needs an event kind");
    need(machine_ != nullptr, "expect before the machine ran");
    if (a[0] == "output") {
      need(a.size() == 2, "expect output takes one quoted string");
      r.passed = machine_->output().find(a[1]) != std::string::npos;
      r.detail = r.passed ? "found" : "not in console output";
      return r;
    }
    if (a[0] == "canary-changed") {
      const auto& h = machine_->canary_history();
      r.passed = h.size() >= 2 && h.back().value != h.front().value;
      r.detail = std::to_string(h.size()) + " boots, canary " + hex32(h.front().value) + " -> " + hex32(h.back().value);
      return r;
    }
    const bool negate = a[0] == "no";
    const std::size_t k = negate ? 1 : 0;
    need(a.size() > k, "expect no needs an event kind");
    auto kind = parse_event_kind(a[k]);
    need(kind.has_value(), "unknown event kind " + a[k]);
    std::vector<Option> opts;
    for (std::size_t i = k + 1; i < a.size(); ++i) {
      auto o = split_option(a[i]);
      // "expect Halt 2" is shorthand for code=2.
      if (!o && *kind == EventKind::Halt && i == k + 1) o = Option{"code", a[i]};
      need(o.has_value(), "expected key=value, got " + a[i]);
      opts.push_back(*o);
    }
    const auto& ev = machine_->events();
    std::string why;
    for (std::size_t i = cursor_; i < ev.size(); ++i) {
      if (ev[i].kind != *kind || !matches(ev[i], opts, why)) continue;
      if (negate) {
        r.detail = "unexpected: " + ev[i].to_string();
        return r;
      }
      cursor_ = i + 1;
      r.passed = true;
      r.detail = ev[i].to_string();
      return r;
    }
    r.passed = negate;
    r.detail = negate ? "none after the previous match" : "no matching event after the previous match";
    return r;
  }

  const Scenario& scenario_;
  ScenarioOptions options_;
  ScenarioReport report_;
  fsys::path base_;
  std::optional<fw::FirmwareModule> module_;
  std::optional<fw::FlatImage> image_;
  esp::MemoryMap map_ = esp::MemoryMap::lm3s6965();
  std::unique_ptr<Machine> machine_;
  std::string input_;
  std::uint64_t device_seed_ = 1;
  std::uint64_t boot_seed_ = 1;
  std::size_t cursor_ = 0;
};

}  // namespace

std::string ScenarioStep::text() const {
  std::string out = command;
  for (const auto& a : args) {
    bool quote = a.empty() || a.find_first_of(" \t\n\"") != std::string::npos;
    if (!quote) {
      out += " " + a;
      continue;
    }
    out += " \"";
    for (char c : a) {
      if (c == '\n') out += "\\n";
      else if (c == '\t') out += "\\t";
      else if (c == '"' || c == '\\') out += std::string("\\") + c;
      else out += c;
    }
    out += "\"";
  }
  return out;
}

Scenario Scenario::parse(const std::string& text, const std::string& name, const std::string& path) {
  Scenario s;
  s.name = name;
  s.path = path;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto toks = tokenize(line, n);
    if (toks.empty()) continue;
    if (toks[0] == "name") {
      if (toks.size() != 2) throw Error(ErrorCode::ParseError, "line " + std::to_string(n) + ": name takes one word");
      s.name = toks[1];
      continue;
    }
    static const std::set<std::string> kCommands = {"load", "input", "input-file", "device", "boot-seed", "boot",
                                                    "run", "until", "inject", "overflow", "call", "reg", "expect"};
    if (!kCommands.count(toks[0])) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(n) + ": unknown command '" + toks[0] + "'");
    }
    ScenarioStep step;
    step.line = n;
    step.command = toks[0];
    step.args.assign(toks.begin() + 1, toks.end());
    s.steps.push_back(std::move(step));
  }
  return s;
}

Scenario Scenario::load(const std::string& path) {
  return parse(read_text(path), fsys::path(path).stem().string(), path);
}

bool ScenarioReport::passed() const {
  if (!errors.empty()) return false;
  for (const auto& e : expectations) {
    if (!e.passed) return false;
  }
  return true;
}

std::string ScenarioReport::to_text() const {
  std::ostringstream os;
  os << "scenario " << name << "\n";
  os << "image " << image << "\n";
  os << "events:\n";
  for (const auto& e : events) os << "  " << e.to_string() << "\n";
  os << "output:\n";
  std::istringstream out(output);
  std::string line;
  while (std::getline(out, line)) os << "  | " << line << "\n";
  os << "expectations:\n";
  for (const auto& e : expectations) {
    os << "  " << (e.passed ? "PASS" : "FAIL") << " line " << e.line << ": " << e.text << "\n";
    os << "       " << e.detail << "\n";
  }
  for (const auto& e : errors) os << "error " << e << "\n";
  os << "cycles " << cycles << "\n";
  os << "boots " << boots << "\n";
  os << "stop " << (stop ? to_string(*stop) : "running") << "\n";
  os << "result " << (passed() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

ScenarioReport run_scenario(const Scenario& scenario, const ScenarioOptions& options) {
  return Runner(scenario, options).run();
}

BuildConfig scenario_build_config(const std::vector<std::string>& options) {
  BuildConfig cfg;
  cfg.ssp = ssp::SspMode::Default;
  cfg.urng = true;
  cfg.esp = true;
  for (const auto& tok : options) {
    auto o = split_option(tok);
    if (!o) throw Error(ErrorCode::InvalidArgument, "expected key=value, got " + tok);
    const auto& [k, v] = *o;
    if (k == "ssp") {
      auto m = parse_ssp_mode(v);
      if (!m) throw Error(ErrorCode::InvalidArgument, "bad ssp mode " + v);
      cfg.ssp = *m;
    } else if (k == "canary") {
      if (v != "plain" && v != "terminator") throw Error(ErrorCode::InvalidArgument, "bad canary style " + v);
      cfg.canary.terminator_style = v == "terminator";
    } else if (k == "policy") {
      auto p = ssp::parse_policy(v);
      if (!p) throw Error(ErrorCode::InvalidArgument, "bad policy " + v);
      cfg.policy = *p;
    } else if (k == "urng") {
      cfg.urng = parse_switch(k, v);
    } else if (k == "esp") {
      cfg.esp = parse_switch(k, v);
    } else if (k == "scenario") {
      if (v != "flash" && v != "ram") throw Error(ErrorCode::InvalidArgument, "scenario must be flash or ram");
      cfg.scenario = v == "ram" ? esp::Scenario::ExecuteFromRam : esp::Scenario::ExecuteFromFlash;
    } else if (k == "seed") {
      auto s = scramble::DiversificationSeed::from_hex(v);
      if (!s) throw Error(ErrorCode::InvalidArgument, "seed must be 64 hex characters");
      cfg.seed = *s;
    } else if (k == "map") {
      cfg.map = esp::MemoryMap::load(v);
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown load option " + k);
    }
  }
  return cfg;
}

}  // namespace uarmor::sim
