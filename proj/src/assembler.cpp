#include "uarmor/assembler.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"

namespace uarmor::fw {

namespace {

struct ParseFailure {
  std::string message;
};

[[noreturn]] void fail(const std::string& msg) { throw ParseFailure{msg}; }

std::string lower(std::string s) {
  for (auto& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (!in_string && c == ';') return line.substr(0, i);
  }
  return line;
}

// Splits operands on commas that are not inside brackets or braces.
std::vector<std::string> split_operands(const std::string& text) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : text) {
    if (c == '[' || c == '{') ++depth;
    if (c == ']' || c == '}') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

Reg parse_reg(const std::string& tok) {
  std::string t = lower(trim(tok));
  if (t == "sp") return kSp;
  if (t == "lr") return kLr;
  if (t == "pc") return kPc;
  if (t.size() >= 2 && t[0] == 'r') {
    auto n = parse_number(t.substr(1));
    if (n && *n <= 12) return Reg(*n);
  }
  fail("expected register, got '" + tok + "'");
}

bool is_reg(const std::string& tok) {
  try {
    parse_reg(tok);
    return true;
  } catch (const ParseFailure&) {
    return false;
  }
}

std::int64_t parse_imm(const std::string& tok) {
  std::string t = trim(tok);
  if (!t.empty() && t[0] == '#') t = t.substr(1);
  if (t.size() == 3 && t[0] == '\'' && t[2] == '\'') return static_cast<unsigned char>(t[1]);
  if (t == "'\\n'") return '\n';
  bool neg = false;
  if (!t.empty() && t[0] == '-') {
    neg = true;
    t = t.substr(1);
  }
  auto n = parse_number(t);
  if (!n) fail("expected immediate, got '" + tok + "'");
  return neg ? -std::int64_t(*n) : std::int64_t(*n);
}

// "@name+4", "@frame", "@canary"
SymRef parse_frame_ref(const std::string& tok) {
  std::string t = trim(tok);
  if (t.empty() || t[0] != '@') fail("expected frame reference, got '" + tok + "'");
  t = t.substr(1);
  std::int32_t addend = 0;
  auto plus = t.find_first_of("+-");
  if (plus != std::string::npos) {
    addend = std::int32_t(parse_imm(t.substr(plus + (t[plus] == '+' ? 1 : 0))));
    t = trim(t.substr(0, plus));
  }
  SymRef s;
  if (t == "frame") {
    s.kind = SymRef::Kind::FrameSize;
  } else if (t == "canary") {
    s.kind = SymRef::Kind::CanarySlot;
  } else {
    s.kind = SymRef::Kind::Local;
    s.name = t;
  }
  s.addend = addend;
  return s;
}

std::pair<std::string, std::int32_t> parse_symbol_addend(const std::string& tok) {
  std::string t = trim(tok);
  auto plus = t.find('+');
  if (plus == std::string::npos) return {t, 0};
  return {trim(t.substr(0, plus)), std::int32_t(parse_imm(t.substr(plus + 1)))};
}

std::vector<Reg> parse_reglist(const std::string& tok, bool& with_lr) {
  std::string t = trim(tok);
  if (t.size() < 2 || t.front() != '{' || t.back() != '}') fail("expected register list, got '" + tok + "'");
  with_lr = false;
  std::vector<Reg> regs;
  std::stringstream ss(t.substr(1, t.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    Reg r = parse_reg(item);
    if (r == kLr) {
      with_lr = true;
    } else {
      if (r < 4 || r > 11) fail("register lists may only hold r4..r11 and lr");
      regs.push_back(r);
    }
  }
  return regs;
}

const std::map<std::string, AluOp>& alu_ops() {
  static const std::map<std::string, AluOp> ops = {
      {"add", AluOp::Add}, {"sub", AluOp::Sub}, {"and", AluOp::And},   {"orr", AluOp::Orr},
      {"eor", AluOp::Eor}, {"lsl", AluOp::Lsl}, {"lsr", AluOp::Lsr},   {"mul", AluOp::Mul},
      {"udiv", AluOp::Udiv}, {"umod", AluOp::Umod}, {"asr", AluOp::Asr},
  };
  return ops;
}

const std::map<std::string, Cond>& branch_ops() {
  static const std::map<std::string, Cond> ops = {
      {"b", Cond::Al},   {"beq", Cond::Eq}, {"bne", Cond::Ne}, {"blt", Cond::Lt},
      {"bge", Cond::Ge}, {"bgt", Cond::Gt}, {"ble", Cond::Le}, {"blo", Cond::Lo},
      {"bhs", Cond::Hs}, {"bhi", Cond::Hi}, {"bls", Cond::Ls},
  };
  return ops;
}

std::vector<std::uint8_t> parse_string_literal(const std::string& tok) {
  std::string t = trim(tok);
  if (t.size() < 2 || t.front() != '"' || t.back() != '"') fail("expected string literal");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    char c = t[i];
    if (c == '\\' && i + 2 < t.size()) {
      char e = t[++i];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case '0': out.push_back(0); break;
        case '\\': out.push_back('\\'); break;
        case '"': out.push_back('"'); break;
        default: fail(std::string("unknown escape \\") + e);
      }
    } else {
      out.push_back(std::uint8_t(c));
    }
  }
  return out;
}

class Parser {
 public:
  FirmwareModule run(std::string_view source, std::string_view filename) {
    std::istringstream in{std::string(source)};
    std::string raw;
    int line_no = 0;
    try {
      while (std::getline(in, raw)) {
        ++line_no;
        line(trim(strip_comment(raw)));
      }
      if (fn_) fail("missing .endfunc for " + fn_->name);
      if (m_.entry.empty()) {
        if (m_.find("main")) {
          m_.entry = "main";
        } else {
          fail("no .entry directive and no main function");
        }
      }
    } catch (const ParseFailure& e) {
      throw Error(ErrorCode::ParseError, std::string(filename) + ":" + std::to_string(line_no) + ": " + e.message);
    }
    fixup_labels();
    try {
      m_.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, std::string(filename) + ": " + e.what());
    }
    return std::move(m_);
  }

 private:
  void line(std::string text) {
    if (text.empty()) return;
    if (text[0] == '.') {
      directive(text);
      return;
    }
    auto colon = text.find(':');
    if (colon != std::string::npos && text.find('"') == std::string::npos &&
        text.substr(0, colon).find_first_of(" \t[") == std::string::npos) {
      label(trim(text.substr(0, colon)));
      text = trim(text.substr(colon + 1));
      if (text.empty()) return;
    }
    instruction(text);
  }

  void directive(const std::string& text) {
    std::istringstream ss(text);
    std::string dir;
    ss >> dir;
    dir = lower(dir);
    std::vector<std::string> words;
    std::string w;
    if (dir == ".string") {
      std::string name;
      ss >> name;
      std::string rest;
      std::getline(ss, rest);
      auto bytes = parse_string_literal(rest);
      bytes.push_back(0);
      need_outside(dir);
      m_.globals.push_back({name, std::uint32_t(bytes.size()), bytes});
      return;
    }
    while (ss >> w) words.push_back(w);

    if (dir == ".entry") {
      if (words.size() != 1) fail(".entry takes one symbol");
      m_.entry = words[0];
    } else if (dir == ".global") {
      need_outside(dir);
      if (words.size() != 2) fail(".global takes a name and a size");
      m_.globals.push_back({words[0], std::uint32_t(parse_imm(words[1])), {}});
    } else if (dir == ".bytes") {
      need_outside(dir);
      if (words.size() != 2) fail(".bytes takes a name and hex data");
      auto data = from_hex(words[1]);
      if (!data) fail("bad hex data");
      m_.globals.push_back({words[0], std::uint32_t(data->size()), *data});
    } else if (dir == ".func") {
      need_outside(dir);
      if (words.empty()) fail(".func needs a name");
      m_.functions.emplace_back();
      fn_ = &m_.functions.back();
      fn_->name = words[0];
      for (std::size_t i = 1; i < words.size(); ++i) {
        std::string a = lower(words[i]);
        if (a == "sensitive") fn_->is_sensitive = true;
        else if (a == "ssp") fn_->force_ssp = true;
        else if (a == "init") fn_->is_init = fn_->is_sensitive = true;
        else if (a == "lock") fn_->is_lock = fn_->is_sensitive = true;
        else fail("unknown function attribute '" + words[i] + "'");
      }
      fn_->blocks.push_back({fn_->name, {}});
      saved_.clear();
      entered_ = false;
    } else if (dir == ".local") {
      if (!fn_) fail(".local outside a function");
      if (words.size() != 3) fail(".local takes name, kind and size");
      LocalVar l;
      l.name = words[0];
      std::string kind = lower(words[1]);
      if (kind == "buffer") l.kind = LocalKind::Buffer;
      else if (kind == "pointer") l.kind = LocalKind::Pointer;
      else if (kind == "scalar") l.kind = LocalKind::Scalar;
      else fail("local kind must be buffer, pointer or scalar");
      l.size = std::uint32_t(parse_imm(words[2]));
      if (l.size == 0) fail("local size must be positive");
      fn_->locals.push_back(l);
      assign_default_frame(*fn_);
    } else if (dir == ".endfunc") {
      if (!fn_) fail(".endfunc without .func");
      if (fn_->instruction_count() == 0) fail("function " + fn_->name + " has no instructions");
      // Drop a trailing empty block left by a final label.
      if (fn_->blocks.size() > 1 && fn_->blocks.back().insns.empty()) fail("label at end of function");
      fn_ = nullptr;
    } else {
      fail("unknown directive " + dir);
    }
  }

  void need_outside(const std::string& dir) {
    if (fn_) fail(dir + " inside a function");
  }

  void label(const std::string& name) {
    if (!fn_) fail("label outside a function");
    if (name.empty()) fail("empty label");
    if (fn_->blocks.back().insns.empty()) fail("label '" + name + "' does not follow an instruction");
    fn_->blocks.push_back({name, {}});
  }

  void emit(Instruction in) {
    if (!fn_) fail("instruction outside a function");
    fn_->blocks.back().insns.push_back(std::move(in));
  }

  SymRef code_target(const std::string& tok) {
    auto [name, addend] = parse_symbol_addend(tok);
    SymRef s;
    s.name = name;
    s.addend = addend;
    bool is_label = false;
    for (const auto& b : fn_->blocks) is_label |= b.label == name && b.label != fn_->name;
    s.kind = is_label ? SymRef::Kind::Label : SymRef::Kind::Function;
    return s;
  }

  void instruction(const std::string& text) {
    if (!fn_) fail("instruction outside a function");
    auto sp = text.find_first_of(" \t");
    std::string mnem = lower(text.substr(0, sp));
    std::vector<std::string> ops = sp == std::string::npos ? std::vector<std::string>{}
                                                            : split_operands(text.substr(sp + 1));
    auto want = [&](std::size_t n) {
      if (ops.size() != n) fail(mnem + " expects " + std::to_string(n) + " operand(s)");
    };
    auto imm_range = [&](std::int64_t v, std::int64_t lo, std::int64_t hi) {
      if (v < lo || v > hi) fail("immediate " + std::to_string(v) + " out of range for " + mnem);
      return v;
    };

    if (mnem == "nop") { want(0); emit(nop()); return; }
    if (mnem == "ret") { want(0); emit(ret()); return; }
    if (mnem == "halt") { want(1); emit(halt(std::uint16_t(imm_range(parse_imm(ops[0]), 0, 0xFFFF)))); return; }
    if (mnem == "trap") { want(1); emit(trap(std::uint16_t(imm_range(parse_imm(ops[0]), 0, 0xFFFF)))); return; }
    if (mnem == "svc") { want(1); emit(svc(std::uint16_t(imm_range(parse_imm(ops[0]), 0, 0xFFFF)))); return; }
    if (mnem == "mov") { want(2); emit(mov(parse_reg(ops[0]), parse_reg(ops[1]))); return; }
    if (mnem == "movi") { want(2); emit(movi(parse_reg(ops[0]), std::uint16_t(imm_range(parse_imm(ops[1]), 0, 0xFFFF)))); return; }
    if (mnem == "movt") { want(2); emit(movt(parse_reg(ops[0]), std::uint16_t(imm_range(parse_imm(ops[1]), 0, 0xFFFF)))); return; }
    if (mnem == "li") {
      want(2);
      Reg rd = parse_reg(ops[0]);
      auto v = std::uint32_t(imm_range(parse_imm(ops[1]), -0x80000000ll, 0xFFFFFFFFll));
      emit(movi(rd, std::uint16_t(v & 0xFFFF)));
      if (v >> 16) emit(movt(rd, std::uint16_t(v >> 16)));
      return;
    }
    if (mnem == "adrd") {
      want(2);
      auto [name, addend] = parse_symbol_addend(ops[1]);
      emit(adrd(parse_reg(ops[0]), {SymRef::Kind::Global, name, addend}));
      return;
    }
    if (mnem == "adrc") {
      want(2);
      Reg rd = parse_reg(ops[0]);
      emit(adrc(rd, code_target(ops[1])));
      return;
    }
    if (mnem == "cmp") {
      want(2);
      Reg rn = parse_reg(ops[0]);
      if (is_reg(ops[1])) emit(alu(AluOp::Cmp, 0, rn, parse_reg(ops[1])));
      else emit(alui(AluOp::Cmp, 0, rn, std::int32_t(imm_range(parse_imm(ops[1]), 0, 2047))));
      return;
    }
    if (auto it = alu_ops().find(mnem); it != alu_ops().end()) {
      want(3);
      Reg rd = parse_reg(ops[0]);
      Reg rn = parse_reg(ops[1]);
      if (is_reg(ops[2])) {
        emit(alu(it->second, rd, rn, parse_reg(ops[2])));
      } else if (trim(ops[2]).starts_with("#@") || trim(ops[2]).starts_with("@")) {
        std::string t = trim(ops[2]);
        if (t[0] == '#') t = t.substr(1);
        emit(alui(it->second, rd, rn, 0, parse_frame_ref(t)));
      } else {
        emit(alui(it->second, rd, rn, std::int32_t(imm_range(parse_imm(ops[2]), 0, 2047))));
      }
      return;
    }
    if (mnem == "ldr" || mnem == "ldrb" || mnem == "str" || mnem == "strb") {
      want(2);
      Reg rt = parse_reg(ops[0]);
      std::string addr = trim(ops[1]);
      if (addr.size() < 3 || addr.front() != '[' || addr.back() != ']') fail("expected [base, offset]");
      auto parts = split_operands(addr.substr(1, addr.size() - 2));
      if (parts.empty() || parts.size() > 2) fail("expected [base, offset]");
      Reg rn = parse_reg(parts[0]);
      std::int32_t off = 0;
      SymRef sym;
      if (parts.size() == 2) {
        std::string o = trim(parts[1]);
        if (o.starts_with("#@")) o = o.substr(1);
        if (o.starts_with("@")) sym = parse_frame_ref(o);
        else off = std::int32_t(imm_range(parse_imm(o), -16384, 16383));
      }
      bool byte = mnem.back() == 'b';
      emit(mnem[0] == 'l' ? load(rt, rn, off, byte, sym) : store(rt, rn, off, byte, sym));
      return;
    }
    if (mnem == "pushm" || mnem == "popm") {
      want(1);
      bool lr = false;
      auto regs = parse_reglist(ops[0], lr);
      emit(mnem == "pushm" ? pushm(regs, lr) : popm(regs, lr));
      return;
    }
    if (mnem == "enter") {
      if (ops.size() > 1) fail("enter takes an optional register list");
      bool lr = false;
      saved_ = ops.empty() ? std::vector<Reg>{} : parse_reglist(ops[0], lr);
      entered_ = true;
      emit(pushm(saved_, true));
      emit(alui(AluOp::Sub, kSp, kSp, 0, {SymRef::Kind::FrameSize, "", 0}));
      return;
    }
    if (mnem == "leave") {
      want(0);
      if (!entered_) fail("leave without enter");
      emit(alui(AluOp::Add, kSp, kSp, 0, {SymRef::Kind::FrameSize, "", 0}));
      emit(popm({saved_.rbegin(), saved_.rend()}, true));
      emit(ret());
      return;
    }
    if (mnem == "call") { want(1); emit(call(code_target(ops[0]))); return; }
    if (mnem == "callr") { want(1); emit(callr(parse_reg(ops[0]))); return; }
    if (auto it = branch_ops().find(mnem); it != branch_ops().end()) {
      want(1);
      emit(br(it->second, code_target(ops[0])));
      return;
    }
    if (mnem == "mpuwr") { want(1); emit(mpuwr(parse_reg(ops[0]))); return; }
    if (mnem == "flashwr") {
      want(2);
      std::string a = trim(ops[1]);
      if (a.size() > 2 && a.front() == '[' && a.back() == ']') a = a.substr(1, a.size() - 2);
      emit(flashwr(parse_reg(ops[0]), parse_reg(a)));
      return;
    }
    fail("unknown mnemonic '" + mnem + "'");
  }

  // Forward references to labels are recorded as Function refs; fix them once the function is done.
  void fixup_labels() {
    for (auto& f : m_.functions) {
      std::map<std::string, bool> labels;
      for (const auto& b : f.blocks) {
        if (b.label != f.name) labels[b.label] = true;
      }
      for (auto& b : f.blocks) {
        for (auto& in : b.insns) {
          if (in.sym.kind == SymRef::Kind::Function && labels.count(in.sym.name)) {
            in.sym.kind = SymRef::Kind::Label;
          }
        }
      }
    }
  }

 private:
  FirmwareModule m_;
  FunctionDef* fn_ = nullptr;
  std::vector<Reg> saved_;
  bool entered_ = false;
};

std::string frame_ref(const SymRef& s) {
  std::string out = "@";
  switch (s.kind) {
    case SymRef::Kind::FrameSize: out += "frame"; break;
    case SymRef::Kind::CanarySlot: out += "canary"; break;
    default: out += s.name; break;
  }
  if (s.addend > 0) out += "+" + std::to_string(s.addend);
  if (s.addend < 0) out += std::to_string(s.addend);
  return out;
}

std::string reglist(const Instruction& in) {
  std::string s = "{";
  for (std::size_t i = 0; i < in.regs.size(); ++i) {
    if (i) s += ", ";
    s += reg_name(in.regs[i]);
  }
  if (in.with_lr) s += in.regs.empty() ? "lr" : ", lr";
  return s + "}";
}

std::string print_instruction(const Instruction& in) {
  auto code_sym = [&]() {
    std::string s = in.sym.name;
    if (in.sym.addend) s += "+" + std::to_string(in.sym.addend);
    return s;
  };
  switch (in.op) {
    case Opcode::Mov:
      if (MovMode(in.sub) == MovMode::DataAddr) return "adrd " + reg_name(in.rd) + ", " + code_sym();
      if (MovMode(in.sub) == MovMode::CodeAddr) return "adrc " + reg_name(in.rd) + ", " + code_sym();
      break;
    case Opcode::Alu:
      if (in.imm_form && in.sym.kind != SymRef::Kind::None) {
        return to_string(AluOp(in.sub)) + " " + reg_name(in.rd) + ", " + reg_name(in.rn) + ", #" + frame_ref(in.sym);
      }
      break;
    case Opcode::Load:
    case Opcode::Store: {
      std::string m = std::string(in.op == Opcode::Load ? "ldr" : "str") + (in.byte_access ? "b" : "");
      std::string off = in.sym.kind != SymRef::Kind::None ? frame_ref(in.sym) : "#" + std::to_string(in.imm);
      return m + " " + reg_name(in.rd) + ", [" + reg_name(in.rn) + ", " + off + "]";
    }
    case Opcode::Pushm: return "pushm " + reglist(in);
    case Opcode::Popm: return "popm " + reglist(in);
    case Opcode::Call: return "call " + code_sym();
    case Opcode::Br:
      return (Cond(in.sub) == Cond::Al ? std::string("b") : "b" + to_string(Cond(in.sub))) + " " + code_sym();
    default:
      break;
  }
  return disassemble(in);
}

}  // namespace

FirmwareModule assemble(std::string_view source, std::string_view filename) {
  return Parser().run(source, filename);
}

FirmwareModule assemble_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return assemble(ss.str(), path);
}

std::string print_module(const FirmwareModule& m) {
  std::ostringstream os;
  os << ".entry " << m.entry << "\n";
  for (const auto& g : m.globals) {
    if (g.init.empty()) {
      os << ".global " << g.name << " " << g.size << "\n";
    } else {
      os << ".bytes " << g.name << " " << to_hex(g.init) << "\n";
    }
  }
  for (const auto& f : m.functions) {
    os << "\n.func " << f.name;
    if (f.is_lock) os << " lock";
    else if (f.is_init) os << " init";
    else if (f.is_sensitive) os << " sensitive";
    if (f.force_ssp) os << " ssp";
    os << "\n";
    static const char* kinds[] = {"buffer", "pointer", "scalar"};
    for (const auto& l : f.locals) os << "  .local " << l.name << " " << kinds[int(l.kind)] << " " << l.size << "\n";
    for (std::size_t b = 0; b < f.blocks.size(); ++b) {
      if (b > 0) os << f.blocks[b].label << ":\n";
      for (const auto& in : f.blocks[b].insns) os << "  " << print_instruction(in) << "\n";
    }
    os << ".endfunc\n";
  }
  return os.str();
}

}  // namespace uarmor::fw
