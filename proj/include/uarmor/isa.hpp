#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace uarmor::fw {

using Reg = std::uint8_t;
inline constexpr Reg kSp = 13;
inline constexpr Reg kLr = 14;
inline constexpr Reg kPc = 15;
inline constexpr Reg kScratch = 12;

enum class Opcode : std::uint8_t {
  Nop = 0x00,
  Trap = 0x01,
  Mov = 0x10,
  Alu = 0x11,
  Load = 0x12,
  Store = 0x13,
  Pushm = 0x20,
  Popm = 0x22,
  Call = 0x30,
  Callr = 0x31,
  Ret = 0x32,
  Br = 0x33,
  Svc = 0x40,
  Mpuwr = 0x50,
  Flashwr = 0x51,
  Halt = 0x7F,
};

enum class MovMode : std::uint8_t { Reg = 0, Imm = 1, High = 2, DataAddr = 3, CodeAddr = 4 };

enum class AluOp : std::uint8_t {
  Add = 0, Sub = 1, And = 2, Orr = 3, Eor = 4, Lsl = 5, Lsr = 6, Mul = 7,
  Cmp = 8, Udiv = 9, Umod = 10, Asr = 11,
};

enum class Cond : std::uint8_t { Al = 0, Eq, Ne, Lt, Ge, Gt, Le, Lo, Hs, Hi, Ls };

/// Symbolic operand resolved at layout time.
struct SymRef {
  enum class Kind : std::uint8_t { None, Local, FrameSize, CanarySlot, Label, Function, Global };
  Kind kind = Kind::None;
  std::string name;
  std::int32_t addend = 0;

  bool operator==(const SymRef&) const = default;
};

struct Instruction {
  Opcode op = Opcode::Nop;
  std::uint8_t sub = 0;  // MovMode, AluOp or Cond
  Reg rd = 0;
  Reg rn = 0;
  Reg rm = 0;
  bool imm_form = false;
  bool byte_access = false;
  bool with_lr = false;
  std::vector<Reg> regs;  // PUSHM/POPM order, callee-saved r4..r11
  std::int32_t imm = 0;
  SymRef sym;

  bool operator==(const Instruction&) const = default;

  bool is_terminator() const;
  bool is_control_transfer() const;
};

// Builders.
Instruction nop();
Instruction trap(std::uint16_t code);
Instruction halt(std::uint16_t code);
Instruction mov(Reg rd, Reg rs);
Instruction movi(Reg rd, std::uint16_t imm);
Instruction movt(Reg rd, std::uint16_t imm);
Instruction adrd(Reg rd, SymRef global);
Instruction adrc(Reg rd, SymRef target);
Instruction alu(AluOp op, Reg rd, Reg rn, Reg rm);
Instruction alui(AluOp op, Reg rd, Reg rn, std::int32_t imm, SymRef sym = {});
Instruction load(Reg rt, Reg rn, std::int32_t off, bool byte = false, SymRef sym = {});
Instruction store(Reg rt, Reg rn, std::int32_t off, bool byte = false, SymRef sym = {});
Instruction pushm(std::vector<Reg> regs, bool with_lr);
Instruction popm(std::vector<Reg> regs, bool with_lr);
Instruction call(SymRef target);
Instruction callr(Reg rm);
Instruction ret();
Instruction br(Cond cond, SymRef target);
Instruction svc(std::uint16_t imm);
Instruction mpuwr(Reg rs);
Instruction flashwr(Reg value, Reg addr);

/// Lehmer rank of an ordering of distinct registers relative to their sorted order.
std::uint32_t order_rank(const std::vector<Reg>& regs);
std::vector<Reg> order_unrank(std::uint8_t mask, std::uint32_t rank);

/// Encodes an instruction whose symbolic operands have already been folded into `imm`.
/// `pc` is only used for validation of range; offsets in `imm` are already pc-relative words.
std::uint32_t encode(const Instruction& insn);
std::optional<Instruction> decode(std::uint32_t word);

std::string disassemble(const Instruction& insn);
std::string to_string(Cond c);
std::string to_string(AluOp op);
std::string reg_name(Reg r);

}  // namespace uarmor::fw
