#include "y86pp/cpu.hpp"

#include <array>
#include <ostream>

#include "y86pp/format.hpp"
#include "y86pp/paging.hpp"

namespace y86pp {

namespace {

FaultInfo page_fault(const PageFault& pf, std::uint32_t eip) {
  return FaultInfo{FaultKind::PageFault, eip, pf.virtual_addr, pf.level};
}

// Translated (but not yet performed) 4-byte access.
struct Access32 {
  std::array<std::uint32_t, 4> phys{};
};

std::variant<Access32, FaultInfo> translate32(const MachineState& s, std::uint32_t vaddr, std::uint32_t eip) {
  const auto outcome = translate_mem_access(s, vaddr, 4);
  if (const auto* pf = std::get_if<PageFault>(&outcome)) return page_fault(*pf, eip);
  const auto& t = std::get<AccessTranslation>(outcome);
  Access32 access;
  for (std::size_t i = 0; i < 4; ++i) access.phys[i] = t.bytes[i];
  return access;
}

std::uint32_t load(const MachineState& s, const Access32& a) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= std::uint32_t{s.memory.read8(a.phys[i])} << (8 * i);
  return v;
}

void store(MachineState& s, const Access32& a, std::uint32_t v, StepLog* log) {
  for (std::size_t i = 0; i < 4; ++i) {
    const auto byte = static_cast<std::uint8_t>(v >> (8 * i));
    s.memory.write8(a.phys[i], byte);
    if (log) log->writes.emplace_back(a.phys[i], byte);
  }
}

void freeze(MachineState& s, FaultInfo info) {
  s.status = RunStatus::Faulted;
  s.fault = info;
}

}  // namespace

std::variant<Instruction, FaultInfo> decode(const MachineState& state) {
  std::array<std::uint8_t, 6> bytes{};
  const auto fetch = [&](std::uint32_t i) -> std::optional<FaultInfo> {
    const auto outcome = translate_mem_access(state, state.eip + i, 1);
    if (const auto* pf = std::get_if<PageFault>(&outcome)) return page_fault(*pf, state.eip);
    bytes[i] = state.memory.read8(std::get<AccessTranslation>(outcome).bytes[0]);
    return std::nullopt;
  };

  if (auto f = fetch(0)) return *f;
  const auto mnemonic = mnemonic_from_opcode(bytes[0]);
  if (!mnemonic) return FaultInfo{FaultKind::DecodeError, state.eip, std::nullopt, 0};
  const auto length = static_cast<std::uint32_t>(encoded_length(*mnemonic));
  for (std::uint32_t i = 1; i < length; ++i) {
    if (auto f = fetch(i)) return *f;
  }
  const auto decoded = decode_bytes(std::span<const std::uint8_t>(bytes.data(), length));
  if (!decoded.instruction) return FaultInfo{FaultKind::DecodeError, state.eip, std::nullopt, 0};
  return *decoded.instruction;
}

void step_in_place(MachineState& s, StepLog* log) {
  if (!s.running()) return;
  const std::uint32_t eip = s.eip;
  if (log) log->eip = eip;

  auto decoded = decode(s);
  if (auto* fault = std::get_if<FaultInfo>(&decoded)) {
    freeze(s, *fault);
    return;
  }
  const Instruction insn = std::get<Instruction>(decoded);
  if (log) log->instruction = insn;
  const auto next = eip + static_cast<std::uint32_t>(encoded_length(insn));

  // Every translation happens before the first write, so a fault leaves the
  // state untouched apart from the status.
  const auto access = [&](std::uint32_t vaddr) -> std::optional<Access32> {
    auto t = translate32(s, vaddr, eip);
    if (auto* fault = std::get_if<FaultInfo>(&t)) {
      freeze(s, *fault);
      return std::nullopt;
    }
    return std::get<Access32>(t);
  };

  switch (insn.mnemonic) {
    case Mnemonic::Halt:
      s.status = RunStatus::Halted;
      s.eip = next;
      return;
    case Mnemonic::Nop: break;
    case Mnemonic::Rrmovl: s.reg(insn.rb) = s.reg(insn.ra); break;
    case Mnemonic::Irmovl: s.reg(insn.rb) = insn.value; break;
    case Mnemonic::Rmmovl: {
      const auto a = access(s.reg(insn.rb) + insn.value);
      if (!a) return;
      store(s, *a, s.reg(insn.ra), log);
      break;
    }
    case Mnemonic::Mrmovl: {
      const auto a = access(s.reg(insn.rb) + insn.value);
      if (!a) return;
      s.reg(insn.ra) = load(s, *a);
      break;
    }
    case Mnemonic::Addl:
    case Mnemonic::Subl:
    case Mnemonic::Andl:
    case Mnemonic::Xorl:
    case Mnemonic::Orl:
    case Mnemonic::Adcl:
    case Mnemonic::Cmpl:
    case Mnemonic::Sall:
    case Mnemonic::Shrl: {
      const auto r = alu_exec(insn.mnemonic, s.reg(insn.ra), s.reg(insn.rb), s.flags);
      if (insn.mnemonic != Mnemonic::Cmpl) s.reg(insn.rb) = r.value;
      s.flags = r.flags;
      break;
    }
    case Mnemonic::Jmp:
    case Mnemonic::Jle:
    case Mnemonic::Jl:
    case Mnemonic::Je:
    case Mnemonic::Jne:
    case Mnemonic::Jge:
    case Mnemonic::Jg:
    case Mnemonic::Jb:
    case Mnemonic::Jbe:
      s.eip = jump_taken(insn.mnemonic, s.flags) ? insn.value : next;
      return;
    case Mnemonic::Call: {
      const std::uint32_t sp = s.reg(Reg::ESP) - 4;
      const auto a = access(sp);
      if (!a) return;
      store(s, *a, next, log);
      s.reg(Reg::ESP) = sp;
      s.eip = insn.value;
      return;
    }
    case Mnemonic::Ret: {
      const std::uint32_t sp = s.reg(Reg::ESP);
      const auto a = access(sp);
      if (!a) return;
      s.eip = load(s, *a);
      s.reg(Reg::ESP) = sp + 4;
      return;
    }
    case Mnemonic::Pushl: {
      const std::uint32_t value = s.reg(insn.ra);
      const std::uint32_t sp = s.reg(Reg::ESP) - 4;
      const auto a = access(sp);
      if (!a) return;
      store(s, *a, value, log);
      s.reg(Reg::ESP) = sp;
      break;
    }
    case Mnemonic::Popl: {
      const std::uint32_t sp = s.reg(Reg::ESP);
      const auto a = access(sp);
      if (!a) return;
      const std::uint32_t value = load(s, *a);
      s.reg(Reg::ESP) = sp + 4;
      // popl %esp leaves the loaded value in esp, as on x86.
      s.reg(insn.ra) = value;
      break;
    }
  }
  s.eip = next;
}

MachineState step(MachineState state) {
  step_in_place(state);
  return state;
}

RunResult run(MachineState state, std::uint64_t max_steps) {
  std::uint64_t steps = 0;
  while (steps < max_steps && state.running()) {
    step_in_place(state);
    ++steps;
  }
  return {std::move(state), steps};
}

RunResult run_traced(MachineState state, std::uint64_t max_steps, std::ostream& trace) {
  static constexpr std::array<const char*, 4> kFlagNames{"zf", "sf", "of", "cf"};
  std::uint64_t steps = 0;
  while (steps < max_steps && state.running()) {
    const auto before_gpr = state.gpr;
    const Flags before_flags = state.flags;
    StepLog log;
    step_in_place(state, &log);

    trace << std::hex << steps << std::dec << ' ' << hex32(log.eip) << ' '
          << (log.instruction ? std::string(mnemonic_name(log.instruction->mnemonic)) : std::string("<fault>"));
    for (std::size_t r = 0; r < kRegisterCount; ++r) {
      if (before_gpr[r] != state.gpr[r]) {
        trace << ' ' << register_name(static_cast<Reg>(r)) << '=' << hex32(before_gpr[r]) << "->"
              << hex32(state.gpr[r]);
      }
    }
    const std::array<bool, 4> fb{before_flags.zf, before_flags.sf, before_flags.of, before_flags.cf};
    const std::array<bool, 4> fa{state.flags.zf, state.flags.sf, state.flags.of, state.flags.cf};
    for (std::size_t f = 0; f < 4; ++f) {
      if (fb[f] != fa[f]) trace << ' ' << kFlagNames[f] << '=' << fb[f] << "->" << fa[f];
    }
    for (const auto& [addr, byte] : log.writes) trace << ' ' << hex32(addr) << '=' << hex8(byte);
    if (state.status == RunStatus::Faulted) trace << " FAULT " << describe(*state.fault);
    trace << '\n';
    ++steps;
  }
  return {std::move(state), steps};
}

}  // namespace y86pp
