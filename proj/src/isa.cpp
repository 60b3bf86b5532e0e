#include "y86pp/isa.hpp"

#include <array>
#include <cassert>

namespace y86pp {

namespace {

struct MnemonicInfo {
  Mnemonic mnemonic;
  std::string_view name;
  std::uint8_t opcode;
  Form form;
};

// icode * 16 + ifun; extends the standard Y86 table with the new arithmetic
// ops (0x64..0x68) and the unsigned jumps (0x77, 0x78).
constexpr std::array<MnemonicInfo, 28> kTable{{
    {Mnemonic::Halt, "halt", 0x00, Form::NoOperands},
    {Mnemonic::Nop, "nop", 0x10, Form::NoOperands},
    {Mnemonic::Rrmovl, "rrmovl", 0x20, Form::RegReg},
    {Mnemonic::Irmovl, "irmovl", 0x30, Form::ImmReg},
    {Mnemonic::Rmmovl, "rmmovl", 0x40, Form::RegMem},
    {Mnemonic::Mrmovl, "mrmovl", 0x50, Form::MemReg},
    {Mnemonic::Addl, "addl", 0x60, Form::RegReg},
    {Mnemonic::Subl, "subl", 0x61, Form::RegReg},
    {Mnemonic::Andl, "andl", 0x62, Form::RegReg},
    {Mnemonic::Xorl, "xorl", 0x63, Form::RegReg},
    {Mnemonic::Orl, "orl", 0x64, Form::RegReg},
    {Mnemonic::Adcl, "adcl", 0x65, Form::RegReg},
    {Mnemonic::Cmpl, "cmpl", 0x66, Form::RegReg},
    {Mnemonic::Sall, "sall", 0x67, Form::RegReg},
    {Mnemonic::Shrl, "shrl", 0x68, Form::RegReg},
    {Mnemonic::Jmp, "jmp", 0x70, Form::Target},
    {Mnemonic::Jle, "jle", 0x71, Form::Target},
    {Mnemonic::Jl, "jl", 0x72, Form::Target},
    {Mnemonic::Je, "je", 0x73, Form::Target},
    {Mnemonic::Jne, "jne", 0x74, Form::Target},
    {Mnemonic::Jge, "jge", 0x75, Form::Target},
    {Mnemonic::Jg, "jg", 0x76, Form::Target},
    {Mnemonic::Jb, "jb", 0x77, Form::Target},
    {Mnemonic::Jbe, "jbe", 0x78, Form::Target},
    {Mnemonic::Call, "call", 0x80, Form::Target},
    {Mnemonic::Ret, "ret", 0x90, Form::NoOperands},
    {Mnemonic::Pushl, "pushl", 0xA0, Form::OneReg},
    {Mnemonic::Popl, "popl", 0xB0, Form::OneReg},
}};

constexpr std::array<std::string_view, kRegisterCount> kRegisterNames{
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi", "imme1", "valu1"};

const MnemonicInfo& info(Mnemonic m) {
  const auto& entry = kTable[static_cast<std::size_t>(m)];
  assert(entry.mnemonic == m);
  return entry;
}

std::uint32_t read_le32(std::span<const std::uint8_t> bytes) {
  return std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) | (std::uint32_t{bytes[2]} << 16) |
         (std::uint32_t{bytes[3]} << 24);
}

void put_le32(std::uint32_t v, std::vector<std::uint8_t>& out) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint8_t nibbles(Reg hi, Reg lo) {
  return static_cast<std::uint8_t>((static_cast<unsigned>(hi) << 4) | static_cast<unsigned>(lo));
}

Flags logic_flags(std::uint32_t r) { return Flags{r == 0, (r >> 31) != 0, false, false}; }

}  // namespace

std::string_view register_name(Reg r) {
  const auto idx = static_cast<std::size_t>(r);
  return idx < kRegisterCount ? kRegisterNames[idx] : std::string_view{"none"};
}

std::optional<Reg> register_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kRegisterCount; ++i) {
    if (kRegisterNames[i] == name) return static_cast<Reg>(i);
  }
  return std::nullopt;
}

bool is_valid_register(std::uint8_t nibble) { return nibble < kRegisterCount; }

std::string_view mnemonic_name(Mnemonic m) { return info(m).name; }

std::optional<Mnemonic> mnemonic_from_name(std::string_view name) {
  for (const auto& entry : kTable) {
    if (entry.name == name) return entry.mnemonic;
  }
  return std::nullopt;
}

Form form_of(Mnemonic m) { return info(m).form; }

std::uint8_t opcode_of(Mnemonic m) { return info(m).opcode; }

std::optional<Mnemonic> mnemonic_from_opcode(std::uint8_t opcode) {
  for (const auto& entry : kTable) {
    if (entry.opcode == opcode) return entry.mnemonic;
  }
  return std::nullopt;
}

std::size_t encoded_length(Mnemonic m) {
  switch (form_of(m)) {
    case Form::NoOperands: return 1;
    case Form::RegReg:
    case Form::OneReg: return 2;
    case Form::Target: return 5;
    case Form::ImmReg:
    case Form::RegMem:
    case Form::MemReg: return 6;
  }
  return 1;
}

bool is_arithmetic(Mnemonic m) {
  const auto op = opcode_of(m);
  return (op & 0xF0) == 0x60;
}

bool is_conditional_jump(Mnemonic m) { return form_of(m) == Form::Target && m != Mnemonic::Jmp && m != Mnemonic::Call; }

bool jump_taken(Mnemonic m, const Flags& f) {
  const bool less = f.sf != f.of;
  switch (m) {
    case Mnemonic::Jmp: return true;
    case Mnemonic::Jle: return less || f.zf;
    case Mnemonic::Jl: return less;
    case Mnemonic::Je: return f.zf;
    case Mnemonic::Jne: return !f.zf;
    case Mnemonic::Jge: return !less;
    case Mnemonic::Jg: return !less && !f.zf;
    case Mnemonic::Jb: return f.cf;
    case Mnemonic::Jbe: return f.cf || f.zf;
    default: return false;
  }
}

void encode(const Instruction& insn, std::vector<std::uint8_t>& out) {
  out.push_back(opcode_of(insn.mnemonic));
  switch (form_of(insn.mnemonic)) {
    case Form::NoOperands: break;
    case Form::RegReg: out.push_back(nibbles(insn.ra, insn.rb)); break;
    case Form::OneReg: out.push_back(nibbles(insn.ra, Reg::None)); break;
    case Form::ImmReg:
      out.push_back(nibbles(Reg::None, insn.rb));
      put_le32(insn.value, out);
      break;
    case Form::RegMem:
    case Form::MemReg:
      out.push_back(nibbles(insn.ra, insn.rb));
      put_le32(insn.value, out);
      break;
    case Form::Target: put_le32(insn.value, out); break;
  }
}

std::vector<std::uint8_t> encode(const Instruction& insn) {
  std::vector<std::uint8_t> out;
  encode(insn, out);
  return out;
}

std::string_view describe(DecodeFailure f) {
  switch (f) {
    case DecodeFailure::UnknownOpcode: return "unknown opcode";
    case DecodeFailure::BadRegister: return "invalid register nibble";
    case DecodeFailure::Truncated: return "truncated instruction";
  }
  return "decode failure";
}

DecodeResult decode_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return {std::nullopt, DecodeFailure::Truncated};
  const auto mnemonic = mnemonic_from_opcode(bytes[0]);
  if (!mnemonic) return {std::nullopt, DecodeFailure::UnknownOpcode};
  const std::size_t length = encoded_length(*mnemonic);
  if (bytes.size() < length) return {std::nullopt, DecodeFailure::Truncated};

  Instruction insn;
  insn.mnemonic = *mnemonic;
  const Form form = form_of(*mnemonic);
  if (form == Form::NoOperands) return {insn, {}};
  if (form == Form::Target) {
    insn.value = read_le32(bytes.subspan(1, 4));
    return {insn, {}};
  }

  const std::uint8_t hi = bytes[1] >> 4;
  const std::uint8_t lo = bytes[1] & 0xF;
  const auto bad = DecodeResult{std::nullopt, DecodeFailure::BadRegister};
  switch (form) {
    case Form::RegReg:
    case Form::RegMem:
    case Form::MemReg:
      if (!is_valid_register(hi) || !is_valid_register(lo)) return bad;
      insn.ra = static_cast<Reg>(hi);
      insn.rb = static_cast<Reg>(lo);
      break;
    case Form::ImmReg:
      if (hi != 0xF || !is_valid_register(lo)) return bad;
      insn.rb = static_cast<Reg>(lo);
      break;
    case Form::OneReg:
      if (!is_valid_register(hi) || lo != 0xF) return bad;
      insn.ra = static_cast<Reg>(hi);
      break;
    default: break;
  }
  if (length == 6) insn.value = read_le32(bytes.subspan(2, 4));
  return {insn, {}};
}

AluResult alu_exec(Mnemonic op, std::uint32_t a, std::uint32_t b, const Flags& in) {
  AluResult out;
  switch (op) {
    case Mnemonic::Addl:
    case Mnemonic::Adcl: {
      const std::uint32_t carry_in = (op == Mnemonic::Adcl && in.cf) ? 1 : 0;
      const std::uint32_t r = b + a + carry_in;
      out.value = r;
      out.flags = logic_flags(r);
      // Carry-out of the full sum, including the incoming carry.
      out.flags.cf = r < b || (carry_in != 0 && r == b);
      out.flags.of = ((~(a ^ b)) & (a ^ r)) >> 31;
      break;
    }
    case Mnemonic::Subl:
    case Mnemonic::Cmpl: {
      const std::uint32_t r = b - a;
      out.value = r;
      out.flags = logic_flags(r);
      out.flags.cf = b < a;
      out.flags.of = ((a ^ b) & (b ^ r)) >> 31;
      break;
    }
    case Mnemonic::Andl: out.value = b & a; out.flags = logic_flags(out.value); break;
    case Mnemonic::Xorl: out.value = b ^ a; out.flags = logic_flags(out.value); break;
    case Mnemonic::Orl: out.value = b | a; out.flags = logic_flags(out.value); break;
    case Mnemonic::Sall:
    case Mnemonic::Shrl: {
      const std::uint32_t count = a & 31;
      if (count == 0) {
        out.value = b;
        out.flags = in;
        break;
      }
      if (op == Mnemonic::Sall) {
        out.value = b << count;
        out.flags = logic_flags(out.value);
        out.flags.cf = (b >> (32 - count)) & 1;
      } else {
        out.value = b >> count;
        out.flags = logic_flags(out.value);
        out.flags.cf = (b >> (count - 1)) & 1;
      }
      break;
    }
    default: assert(false && "alu_exec: not an arithmetic mnemonic");
  }
  return out;
}

std::string format_instruction(const Instruction& insn, std::string_view target_label) {
  std::string text = "(";
  text += mnemonic_name(insn.mnemonic);
  auto reg = [](Reg r) { return std::string(":") + std::string(register_name(r)); };
  auto signed_value = [](std::uint32_t v) { return std::to_string(static_cast<std::int32_t>(v)); };
  switch (form_of(insn.mnemonic)) {
    case Form::NoOperands: break;
    case Form::RegReg: text += " " + reg(insn.ra) + " " + reg(insn.rb); break;
    case Form::OneReg: text += " " + reg(insn.ra); break;
    case Form::ImmReg:
      text += " " + (insn.value >= 0x80000000u ? signed_value(insn.value) : std::to_string(insn.value)) + " " +
              reg(insn.rb);
      break;
    case Form::RegMem: text += " " + reg(insn.ra) + " " + signed_value(insn.value) + " (" + reg(insn.rb) + ")"; break;
    case Form::MemReg: text += " " + signed_value(insn.value) + " (" + reg(insn.rb) + ") " + reg(insn.ra); break;
    case Form::Target:
      text += " ";
      text += target_label.empty() ? std::to_string(insn.value) : ":" + std::string(target_label);
      break;
  }
  text += ")";
  return text;
}

}  // namespace y86pp
