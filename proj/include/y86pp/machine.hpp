#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "y86pp/isa.hpp"
#include "y86pp/memory.hpp"

namespace y86pp {

enum class FaultKind : std::uint8_t {
  PageFault,
  DecodeError,
  HaltInstr,  // a halt executed where the verifier expected to keep running
};

struct FaultInfo {
  FaultKind kind = FaultKind::DecodeError;
  std::uint32_t eip = 0;
  std::optional<std::uint32_t> address;  // faulting virtual address, PageFault only
  int level = 0;                         // 1 = PDPT entry, 2 = PDT entry, PageFault only

  friend bool operator==(const FaultInfo&, const FaultInfo&) = default;
};

std::string describe(const FaultInfo& fault);

enum class RunStatus : std::uint8_t { Running, Halted, Faulted };

struct MachineState {
  std::uint32_t eip = 0;
  std::array<std::uint32_t, kRegisterCount> gpr{};
  Flags flags;
  std::uint32_t cr3 = 0;
  bool guest_mode = false;
  // Mode-switch ESP/EIP preservation registers. No instruction reads or
  // writes them.
  std::array<std::uint32_t, 4> shadow{};
  Memory memory;
  RunStatus status = RunStatus::Running;
  std::optional<FaultInfo> fault;  // set iff status == Faulted

  std::uint32_t& reg(Reg r) { return gpr[static_cast<std::size_t>(r)]; }
  std::uint32_t reg(Reg r) const { return gpr[static_cast<std::size_t>(r)]; }

  bool running() const { return status == RunStatus::Running; }

  friend bool operator==(const MachineState&, const MachineState&) = default;
};

// One placed region of an initial memory layout. `contents` is written at
// `base`; the rest of `size` is reserved and stays zero.
struct LayoutRegion {
  std::string name;
  std::uint32_t base = 0;
  std::uint64_t size = 0;
  std::vector<std::uint8_t> contents;

  AddressRange range() const { return {base, size}; }
};

struct Layout {
  std::vector<LayoutRegion> regions;
};

// Zeroed, Running machine with the layout's contents placed in memory.
// Throws ConfigError for overlapping or out-of-range regions.
MachineState make_initial_state(const Layout& layout);

}  // namespace y86pp
