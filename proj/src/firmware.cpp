#include "uarmor/firmware.hpp"

#include <algorithm>
#include <set>

#include "uarmor/error.hpp"

namespace uarmor::fw {

std::uint32_t FunctionDef::locals_size() const {
  std::uint32_t total = 0;
  for (const auto& l : locals) total += align4(l.size);
  return total;
}

std::uint32_t FunctionDef::frame_size() const { return locals_size() + (has_canary ? 4 : 0); }

std::size_t FunctionDef::instruction_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.insns.size();
  return n;
}

const LocalVar* FunctionDef::find_local(std::string_view local) const {
  for (const auto& l : locals) {
    if (l.name == local) return &l;
  }
  return nullptr;
}

const FunctionDef* FirmwareModule::find(std::string_view name) const {
  for (const auto& f : functions) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

FunctionDef* FirmwareModule::find(std::string_view name) {
  for (auto& f : functions) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

const GlobalDef* FirmwareModule::find_global(std::string_view name) const {
  for (const auto& g : globals) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

std::size_t FirmwareModule::instruction_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.instruction_count();
  return n;
}

void FirmwareModule::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  std::set<std::string, std::less<>> names;
  for (const auto& f : functions) {
    if (!names.insert(f.name).second) fail("duplicate symbol " + f.name);
  }
  for (const auto& g : globals) {
    if (!names.insert(g.name).second) fail("duplicate symbol " + g.name);
    if (!g.init.empty() && g.init.size() > g.size) fail("initializer larger than " + g.name);
  }
  if (!find(entry)) fail("entry symbol '" + entry + "' does not name a function");

  for (const auto& f : functions) {
    if (f.blocks.empty() || f.instruction_count() == 0) fail("function " + f.name + " is empty");
    std::set<std::string, std::less<>> labels;
    for (const auto& b : f.blocks) {
      if (!labels.insert(b.label).second) fail("duplicate label " + b.label + " in " + f.name);
    }
    std::set<std::string, std::less<>> locals;
    for (const auto& l : f.locals) {
      if (!locals.insert(l.name).second) fail("duplicate local " + l.name + " in " + f.name);
    }
    for (const auto& b : f.blocks) {
      for (const auto& in : b.insns) {
        if ((in.op == Opcode::Mpuwr || in.op == Opcode::Flashwr) && !f.is_sensitive) {
          fail("function " + f.name + " uses a privileged instruction but is not sensitive");
        }
        const auto& s = in.sym;
        switch (s.kind) {
          case SymRef::Kind::None:
          case SymRef::Kind::FrameSize:
            break;
          case SymRef::Kind::CanarySlot:
            if (!f.has_canary) fail("canary slot referenced in " + f.name + " without a canary");
            break;
          case SymRef::Kind::Local:
            if (!f.find_local(s.name)) fail("unknown local " + s.name + " in " + f.name);
            break;
          case SymRef::Kind::Label:
            if (!labels.count(s.name)) fail("unknown label " + s.name + " in " + f.name);
            break;
          case SymRef::Kind::Function:
            if (!find(s.name)) fail("unknown function " + s.name + " referenced from " + f.name);
            break;
          case SymRef::Kind::Global:
            if (!find_global(s.name)) fail("unknown global " + s.name + " referenced from " + f.name);
            break;
        }
      }
    }
  }
}

void assign_default_frame(FunctionDef& fn) {
  std::int32_t cursor = std::int32_t(fn.locals_size());
  for (auto& l : fn.locals) {
    cursor -= std::int32_t(align4(l.size));
    l.offset = cursor;
  }
}

FunctionDef make_violation_handler() {
  FunctionDef f;
  f.name = std::string(kViolationHandler);
  f.blocks.push_back({f.name, {svc(kViolationSvc), trap(0xDEAD)}});
  return f;
}

FunctionDef make_lock_stub() {
  FunctionDef f;
  f.name = std::string(kLockStub);
  f.is_sensitive = true;
  f.is_lock = true;
  f.blocks.push_back({f.name, {movi(0, 3), mpuwr(0), ret()}});
  return f;
}

void ensure_violation_handler(FirmwareModule& m) {
  if (!m.find(kViolationHandler)) m.functions.push_back(make_violation_handler());
}

void ensure_global(FirmwareModule& m, std::string_view name, std::uint32_t size, bool at_front) {
  if (m.find_global(name)) return;
  GlobalDef g{std::string(name), size, {}};
  if (at_front) {
    m.globals.insert(m.globals.begin(), std::move(g));
  } else {
    m.globals.push_back(std::move(g));
  }
}

}  // namespace uarmor::fw
