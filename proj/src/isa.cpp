#include "uarmor/isa.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

#include "uarmor/error.hpp"

namespace uarmor::fw {

namespace {

bool fits_signed(std::int64_t v, int bits) {
  std::int64_t lo = -(std::int64_t(1) << (bits - 1));
  std::int64_t hi = (std::int64_t(1) << (bits - 1)) - 1;
  return v >= lo && v <= hi;
}

std::int32_t sign_extend(std::uint32_t v, int bits) {
  std::uint32_t m = 1u << (bits - 1);
  v &= (1u << bits) - 1;
  return std::int32_t((v ^ m) - m);
}

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); }

void check_reg(Reg r) {
  if (r > 15) bad("register out of range");
}

std::uint32_t factorial(unsigned n) {
  std::uint32_t f = 1;
  for (unsigned i = 2; i <= n; ++i) f *= i;
  return f;
}

std::uint8_t reg_mask(const std::vector<Reg>& regs) {
  std::uint8_t mask = 0;
  for (Reg r : regs) {
    if (r < 4 || r > 11) bad("register lists may only hold r4..r11");
    std::uint8_t bit = std::uint8_t(1u << (r - 4));
    if (mask & bit) bad("duplicate register in list");
    mask |= bit;
  }
  return mask;
}

}  // namespace

bool Instruction::is_terminator() const {
  switch (op) {
    case Opcode::Ret:
    case Opcode::Halt:
    case Opcode::Trap:
      return true;
    case Opcode::Br:
      return Cond(sub) == Cond::Al;
    default:
      return false;
  }
}

bool Instruction::is_control_transfer() const {
  switch (op) {
    case Opcode::Ret:
    case Opcode::Br:
    case Opcode::Call:
    case Opcode::Callr:
    case Opcode::Halt:
    case Opcode::Trap:
    case Opcode::Svc:
      return true;
    default:
      return false;
  }
}

Instruction nop() { return {}; }

Instruction trap(std::uint16_t code) {
  Instruction i;
  i.op = Opcode::Trap;
  i.imm = code;
  return i;
}

Instruction halt(std::uint16_t code) {
  Instruction i;
  i.op = Opcode::Halt;
  i.imm = code;
  return i;
}

Instruction mov(Reg rd, Reg rs) {
  Instruction i;
  i.op = Opcode::Mov;
  i.sub = std::uint8_t(MovMode::Reg);
  i.rd = rd;
  i.rm = rs;
  return i;
}

Instruction movi(Reg rd, std::uint16_t imm) {
  Instruction i;
  i.op = Opcode::Mov;
  i.sub = std::uint8_t(MovMode::Imm);
  i.rd = rd;
  i.imm_form = true;
  i.imm = imm;
  return i;
}

Instruction movt(Reg rd, std::uint16_t imm) {
  Instruction i = movi(rd, imm);
  i.sub = std::uint8_t(MovMode::High);
  return i;
}

Instruction adrd(Reg rd, SymRef global) {
  Instruction i;
  i.op = Opcode::Mov;
  i.sub = std::uint8_t(MovMode::DataAddr);
  i.rd = rd;
  i.imm_form = true;
  i.sym = std::move(global);
  return i;
}

Instruction adrc(Reg rd, SymRef target) {
  Instruction i = adrd(rd, std::move(target));
  i.sub = std::uint8_t(MovMode::CodeAddr);
  return i;
}

Instruction alu(AluOp op, Reg rd, Reg rn, Reg rm) {
  Instruction i;
  i.op = Opcode::Alu;
  i.sub = std::uint8_t(op);
  i.rd = op == AluOp::Cmp ? 0 : rd;
  i.rn = rn;
  i.rm = rm;
  return i;
}

Instruction alui(AluOp op, Reg rd, Reg rn, std::int32_t imm, SymRef sym) {
  Instruction i;
  i.op = Opcode::Alu;
  i.sub = std::uint8_t(op);
  i.rd = op == AluOp::Cmp ? 0 : rd;
  i.rn = rn;
  i.imm_form = true;
  i.imm = imm;
  i.sym = std::move(sym);
  return i;
}

Instruction load(Reg rt, Reg rn, std::int32_t off, bool byte, SymRef sym) {
  Instruction i;
  i.op = Opcode::Load;
  i.rd = rt;
  i.rn = rn;
  i.byte_access = byte;
  i.imm = off;
  i.sym = std::move(sym);
  return i;
}

Instruction store(Reg rt, Reg rn, std::int32_t off, bool byte, SymRef sym) {
  Instruction i = load(rt, rn, off, byte, std::move(sym));
  i.op = Opcode::Store;
  return i;
}

Instruction pushm(std::vector<Reg> regs, bool with_lr) {
  Instruction i;
  i.op = Opcode::Pushm;
  i.regs = std::move(regs);
  i.with_lr = with_lr;
  return i;
}

Instruction popm(std::vector<Reg> regs, bool with_lr) {
  Instruction i = pushm(std::move(regs), with_lr);
  i.op = Opcode::Popm;
  return i;
}

Instruction call(SymRef target) {
  Instruction i;
  i.op = Opcode::Call;
  i.sym = std::move(target);
  return i;
}

Instruction callr(Reg rm) {
  Instruction i;
  i.op = Opcode::Callr;
  i.rm = rm;
  return i;
}

Instruction ret() {
  Instruction i;
  i.op = Opcode::Ret;
  return i;
}

Instruction br(Cond cond, SymRef target) {
  Instruction i;
  i.op = Opcode::Br;
  i.sub = std::uint8_t(cond);
  i.sym = std::move(target);
  return i;
}

Instruction svc(std::uint16_t imm) {
  Instruction i;
  i.op = Opcode::Svc;
  i.imm = imm;
  return i;
}

Instruction mpuwr(Reg rs) {
  Instruction i;
  i.op = Opcode::Mpuwr;
  i.rm = rs;
  return i;
}

Instruction flashwr(Reg value, Reg addr) {
  Instruction i;
  i.op = Opcode::Flashwr;
  i.rd = value;
  i.rn = addr;
  return i;
}

std::uint32_t order_rank(const std::vector<Reg>& regs) {
  std::uint32_t rank = 0;
  const unsigned k = unsigned(regs.size());
  for (unsigned i = 0; i < k; ++i) {
    unsigned smaller = 0;
    for (unsigned j = i + 1; j < k; ++j) {
      if (regs[j] < regs[i]) ++smaller;
    }
    rank += smaller * factorial(k - 1 - i);
  }
  return rank;
}

std::vector<Reg> order_unrank(std::uint8_t mask, std::uint32_t rank) {
  std::vector<Reg> pool;
  for (int b = 0; b < 8; ++b) {
    if (mask & (1u << b)) pool.push_back(Reg(4 + b));
  }
  std::vector<Reg> out;
  const unsigned k = unsigned(pool.size());
  for (unsigned i = 0; i < k; ++i) {
    std::uint32_t f = factorial(k - 1 - i);
    std::uint32_t idx = rank / f;
    rank %= f;
    out.push_back(pool[idx]);
    pool.erase(pool.begin() + idx);
  }
  return out;
}

std::uint32_t encode(const Instruction& in) {
  const std::uint32_t op = std::uint32_t(in.op) << 24;
  auto need_unsigned = [](std::int64_t v, int bits) {
    if (v < 0 || v >= (std::int64_t(1) << bits)) bad("immediate out of range: " + std::to_string(v));
    return std::uint32_t(v);
  };
  auto need_signed = [](std::int64_t v, int bits) {
    if (!fits_signed(v, bits)) bad("offset out of range: " + std::to_string(v));
    return std::uint32_t(v) & ((1u << bits) - 1);
  };
  check_reg(in.rd);
  check_reg(in.rn);
  check_reg(in.rm);

  switch (in.op) {
    case Opcode::Nop:
    case Opcode::Ret:
      return op;
    case Opcode::Trap:
    case Opcode::Halt:
    case Opcode::Svc:
      return op | need_unsigned(in.imm, 16);
    case Opcode::Mov: {
      std::uint32_t w = op | std::uint32_t(in.sub) << 20 | std::uint32_t(in.rd) << 16;
      switch (MovMode(in.sub)) {
        case MovMode::Reg: return w | in.rm;
        case MovMode::Imm:
        case MovMode::High:
        case MovMode::DataAddr: return w | need_unsigned(in.imm, 16);
        case MovMode::CodeAddr: return w | need_signed(in.imm, 16);
      }
      bad("bad mov mode");
    }
    case Opcode::Alu: {
      if (in.sub > std::uint8_t(AluOp::Asr)) bad("bad alu op");
      std::uint32_t w = op | std::uint32_t(in.sub) << 20 | std::uint32_t(in.rd) << 16 |
                        std::uint32_t(in.rn) << 12;
      if (in.imm_form) return w | 1u << 11 | need_unsigned(in.imm, 11);
      return w | in.rm;
    }
    case Opcode::Load:
    case Opcode::Store:
      return op | std::uint32_t(in.rd) << 20 | std::uint32_t(in.rn) << 16 |
             (in.byte_access ? 1u << 15 : 0u) | need_signed(in.imm, 15);
    case Opcode::Pushm:
    case Opcode::Popm: {
      std::uint8_t mask = reg_mask(in.regs);
      std::uint32_t base = std::uint32_t(std::uint8_t(in.op) | (in.with_lr ? 1 : 0)) << 24;
      return base | std::uint32_t(mask) << 16 | order_rank(in.regs);
    }
    case Opcode::Call:
      return op | need_signed(in.imm, 24);
    case Opcode::Callr:
      return op | std::uint32_t(in.rm) << 16;
    case Opcode::Br:
      if (in.sub > std::uint8_t(Cond::Ls)) bad("bad condition");
      return op | std::uint32_t(in.sub) << 20 | need_signed(in.imm, 20);
    case Opcode::Mpuwr:
      return op | std::uint32_t(in.rm) << 16;
    case Opcode::Flashwr:
      return op | std::uint32_t(in.rd) << 20 | std::uint32_t(in.rn) << 16;
  }
  bad("unknown opcode");
}

std::optional<Instruction> decode(std::uint32_t w) {
  const std::uint8_t opb = std::uint8_t(w >> 24);
  const std::uint32_t low24 = w & 0xFFFFFF;
  auto field = [w](int hi, int lo) { return (w >> lo) & ((1u << (hi - lo + 1)) - 1); };

  switch (opb) {
    case 0x00:
      if (low24 != 0) return std::nullopt;
      return nop();
    case 0x01:
      if (field(23, 16)) return std::nullopt;
      return trap(std::uint16_t(w));
    case 0x7F:
      if (field(23, 16)) return std::nullopt;
      return halt(std::uint16_t(w));
    case 0x40:
      if (field(23, 16)) return std::nullopt;
      return svc(std::uint16_t(w));
    case 0x32:
      if (low24 != 0) return std::nullopt;
      return ret();
    case 0x10: {
      auto mode = field(23, 20);
      Reg rd = Reg(field(19, 16));
      switch (mode) {
        case 0:
          if (field(15, 4)) return std::nullopt;
          return mov(rd, Reg(field(3, 0)));
        case 1: return movi(rd, std::uint16_t(w));
        case 2: return movt(rd, std::uint16_t(w));
        case 3: {
          Instruction i = adrd(rd, {});
          i.imm = std::int32_t(w & 0xFFFF);
          return i;
        }
        case 4: {
          Instruction i = adrc(rd, {});
          i.imm = sign_extend(w, 16);
          return i;
        }
        default: return std::nullopt;
      }
    }
    case 0x11: {
      auto op = field(23, 20);
      if (op > std::uint32_t(AluOp::Asr)) return std::nullopt;
      Reg rd = Reg(field(19, 16));
      Reg rn = Reg(field(15, 12));
      if (AluOp(op) == AluOp::Cmp && rd != 0) return std::nullopt;
      if (field(11, 11)) return alui(AluOp(op), rd, rn, std::int32_t(field(10, 0)));
      if (field(10, 4)) return std::nullopt;
      return alu(AluOp(op), rd, rn, Reg(field(3, 0)));
    }
    case 0x12:
    case 0x13: {
      Instruction i = load(Reg(field(23, 20)), Reg(field(19, 16)), sign_extend(w, 15), field(15, 15) != 0);
      if (opb == 0x13) i.op = Opcode::Store;
      return i;
    }
    case 0x20:
    case 0x21:
    case 0x22:
    case 0x23: {
      std::uint8_t mask = std::uint8_t(field(23, 16));
      std::uint32_t rank = field(15, 0);
      unsigned k = unsigned(std::popcount(mask));
      if (rank >= factorial(k)) return std::nullopt;
      auto regs = order_unrank(mask, rank);
      bool lr = opb & 1;
      return (opb & 2) ? popm(std::move(regs), lr) : pushm(std::move(regs), lr);
    }
    case 0x30: {
      Instruction i = call({});
      i.imm = sign_extend(w, 24);
      return i;
    }
    case 0x31:
      if (field(23, 20) || field(15, 0)) return std::nullopt;
      return callr(Reg(field(19, 16)));
    case 0x33: {
      auto cond = field(23, 20);
      if (cond > std::uint32_t(Cond::Ls)) return std::nullopt;
      Instruction i = br(Cond(cond), {});
      i.imm = sign_extend(w, 20);
      return i;
    }
    case 0x50:
      if (field(23, 20) || field(15, 0)) return std::nullopt;
      return mpuwr(Reg(field(19, 16)));
    case 0x51:
      if (field(15, 0)) return std::nullopt;
      return flashwr(Reg(field(23, 20)), Reg(field(19, 16)));
    default:
      return std::nullopt;
  }
}

std::string reg_name(Reg r) {
  switch (r) {
    case kSp: return "sp";
    case kLr: return "lr";
    case kPc: return "pc";
    default: return "r" + std::to_string(r);
  }
}

std::string to_string(Cond c) {
  static const char* names[] = {"al", "eq", "ne", "lt", "ge", "gt", "le", "lo", "hs", "hi", "ls"};
  return names[std::size_t(c)];
}

std::string to_string(AluOp op) {
  static const char* names[] = {"add", "sub", "and", "orr", "eor", "lsl",
                                "lsr", "mul", "cmp", "udiv", "umod", "asr"};
  return names[std::size_t(op)];
}

std::string disassemble(const Instruction& in) {
  std::ostringstream os;
  auto target = [&]() -> std::string {
    if (in.sym.kind != SymRef::Kind::None) {
      std::string s = in.sym.name;
      if (in.sym.addend) s += (in.sym.addend > 0 ? "+" : "") + std::to_string(in.sym.addend);
      return s;
    }
    return "." + std::string(in.imm >= 0 ? "+" : "") + std::to_string(in.imm * 4);
  };
  auto reglist = [&]() {
    std::string s = "{";
    for (std::size_t i = 0; i < in.regs.size(); ++i) {
      if (i) s += ",";
      s += reg_name(in.regs[i]);
    }
    if (in.with_lr) s += in.regs.empty() ? "lr" : ",lr";
    return s + "}";
  };
  switch (in.op) {
    case Opcode::Nop: return "nop";
    case Opcode::Trap: os << "trap #" << in.imm; break;
    case Opcode::Halt: os << "halt #" << in.imm; break;
    case Opcode::Svc: os << "svc #" << in.imm; break;
    case Opcode::Ret: return "ret";
    case Opcode::Mov:
      switch (MovMode(in.sub)) {
        case MovMode::Reg: os << "mov " << reg_name(in.rd) << ", " << reg_name(in.rm); break;
        case MovMode::Imm: os << "movi " << reg_name(in.rd) << ", #" << in.imm; break;
        case MovMode::High: os << "movt " << reg_name(in.rd) << ", #" << in.imm; break;
        case MovMode::DataAddr:
          os << "adrd " << reg_name(in.rd) << ", "
             << (in.sym.kind != SymRef::Kind::None ? in.sym.name : "#" + std::to_string(in.imm));
          break;
        case MovMode::CodeAddr: os << "adrc " << reg_name(in.rd) << ", " << target(); break;
      }
      break;
    case Opcode::Alu:
      if (AluOp(in.sub) == AluOp::Cmp) {
        os << "cmp " << reg_name(in.rn);
      } else {
        os << to_string(AluOp(in.sub)) << " " << reg_name(in.rd) << ", " << reg_name(in.rn);
      }
      if (in.imm_form) {
        os << ", #" << (in.sym.kind != SymRef::Kind::None ? "@" + in.sym.name : std::to_string(in.imm));
      } else {
        os << ", " << reg_name(in.rm);
      }
      break;
    case Opcode::Load:
    case Opcode::Store:
      os << (in.op == Opcode::Load ? "ldr" : "str") << (in.byte_access ? "b " : " ") << reg_name(in.rd)
         << ", [" << reg_name(in.rn) << ", ";
      if (in.sym.kind != SymRef::Kind::None) {
        os << "@" << in.sym.name;
        if (in.sym.addend) os << "+" << in.sym.addend;
      } else {
        os << "#" << in.imm;
      }
      os << "]";
      break;
    case Opcode::Pushm: os << "pushm " << reglist(); break;
    case Opcode::Popm: os << "popm " << reglist(); break;
    case Opcode::Call: os << "call " << target(); break;
    case Opcode::Callr: os << "callr " << reg_name(in.rm); break;
    case Opcode::Br:
      os << (Cond(in.sub) == Cond::Al ? std::string("b") : "b" + to_string(Cond(in.sub))) << " " << target();
      break;
    case Opcode::Mpuwr: os << "mpuwr " << reg_name(in.rm); break;
    case Opcode::Flashwr: os << "flashwr " << reg_name(in.rd) << ", [" << reg_name(in.rn) << "]"; break;
  }
  return os.str();
}

}  // namespace uarmor::fw
