#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <variant>
#include <vector>

#include "y86pp/machine.hpp"

namespace y86pp {

// Fetches and decodes the instruction at eip. Fetch goes through address
// translation, so the result may be a page fault as well as a decode error.
// Does not modify the state.
std::variant<Instruction, FaultInfo> decode(const MachineState& state);

// Side effects of one step, for tracing.
struct StepLog {
  std::uint32_t eip = 0;
  std::optional<Instruction> instruction;
  std::vector<std::pair<std::uint32_t, std::uint8_t>> writes;  // physical address, byte
};

// Executes one instruction in place. A faulting step writes nothing and
// leaves the machine Faulted; a non-Running machine is left untouched.
void step_in_place(MachineState& state, StepLog* log = nullptr);

MachineState step(MachineState state);

struct RunResult {
  MachineState state;
  std::uint64_t steps = 0;
};

// Steps until the machine stops running or `max_steps` have executed.
RunResult run(MachineState state, std::uint64_t max_steps);

// Same as run, printing one trace line per step:
//   <index> <eip> <mnemonic> [reg=old->new ...] [flag=0->1 ...] [mem addr=byte ...]
RunResult run_traced(MachineState state, std::uint64_t max_steps, std::ostream& trace);

}  // namespace y86pp
