#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace y86pp {

// Register nibble values as they appear in the encoding.
enum class Reg : std::uint8_t {
  EAX = 0,
  ECX = 1,
  EDX = 2,
  EBX = 3,
  ESP = 4,
  EBP = 5,
  ESI = 6,
  EDI = 7,
  IMME1 = 8,
  VALU1 = 9,
  None = 0xF,
};

inline constexpr std::size_t kRegisterCount = 10;

std::string_view register_name(Reg r);  // "eax", "imme1", ...
std::optional<Reg> register_from_name(std::string_view name);
bool is_valid_register(std::uint8_t nibble);

enum class Mnemonic : std::uint8_t {
  Halt, Nop, Rrmovl, Irmovl, Rmmovl, Mrmovl,
  Addl, Subl, Andl, Xorl, Orl, Adcl, Cmpl, Sall, Shrl,
  Jmp, Jle, Jl, Je, Jne, Jge, Jg, Jb, Jbe,
  Call, Ret, Pushl, Popl,
};

// Operand shape of a mnemonic.
enum class Form : std::uint8_t {
  NoOperands,  // halt nop ret
  RegReg,      // rrmovl, arithmetic: ra = source, rb = destination
  ImmReg,      // irmovl value, rb
  RegMem,      // rmmovl ra, value(rb)
  MemReg,      // mrmovl value(rb), ra
  Target,      // jumps and call: absolute value
  OneReg,      // pushl/popl ra
};

struct Flags {
  bool zf = false;
  bool sf = false;
  bool of = false;
  bool cf = false;
  friend bool operator==(const Flags&, const Flags&) = default;
};

struct Instruction {
  Mnemonic mnemonic = Mnemonic::Nop;
  Reg ra = Reg::None;
  Reg rb = Reg::None;
  std::uint32_t value = 0;  // immediate, displacement, or jump/call target

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

std::string_view mnemonic_name(Mnemonic m);
std::optional<Mnemonic> mnemonic_from_name(std::string_view name);
Form form_of(Mnemonic m);
std::uint8_t opcode_of(Mnemonic m);
std::optional<Mnemonic> mnemonic_from_opcode(std::uint8_t opcode);

// Encoded size in bytes: 1, 2, 5 or 6.
std::size_t encoded_length(Mnemonic m);
inline std::size_t encoded_length(const Instruction& insn) { return encoded_length(insn.mnemonic); }

bool is_arithmetic(Mnemonic m);
bool is_conditional_jump(Mnemonic m);

// Whether a jump with this mnemonic is taken under `flags`. jmp is always taken.
bool jump_taken(Mnemonic m, const Flags& flags);

void encode(const Instruction& insn, std::vector<std::uint8_t>& out);
std::vector<std::uint8_t> encode(const Instruction& insn);

// Why a byte sequence failed to decode.
enum class DecodeFailure : std::uint8_t { UnknownOpcode, BadRegister, Truncated };
std::string_view describe(DecodeFailure f);

struct DecodeResult {
  std::optional<Instruction> instruction;
  DecodeFailure failure = DecodeFailure::UnknownOpcode;
};

// Decodes one instruction from the front of `bytes`.
DecodeResult decode_bytes(std::span<const std::uint8_t> bytes);

struct AluResult {
  std::uint32_t value = 0;
  Flags flags;
};

// Computes `b op a` (b is the destination operand). `in` supplies the carry
// for adcl and the flags returned unchanged by a shift of zero.
AluResult alu_exec(Mnemonic op, std::uint32_t a, std::uint32_t b, const Flags& in = {});

// Assembly text of one instruction, e.g. "(mrmovl -28 (:ebp) :valu1)".
// Jump targets are printed numerically unless a label is supplied.
std::string format_instruction(const Instruction& insn, std::string_view target_label = {});

}  // namespace y86pp
