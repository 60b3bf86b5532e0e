#pragma once

#include <array>
#include <cstdint>
#include <variant>

#include "y86pp/machine.hpp"

namespace y86pp {

// PAE-style two-level walk with 2MiB pages:
//   bits 31:30 select one of 4 PDPT entries,
//   bits 29:21 select one of 512 PDT entries,
//   bits 20:0 are the offset into the 2MiB frame.

struct VirtualSplit {
  std::uint32_t pdpt_index = 0;  // 0..3
  std::uint32_t pdt_index = 0;   // 0..511
  std::uint32_t offset = 0;      // 0..2^21-1
  friend bool operator==(const VirtualSplit&, const VirtualSplit&) = default;
};

constexpr VirtualSplit split_virtual(std::uint32_t addr) {
  return {addr >> 30, (addr >> 21) & 0x1FF, addr & 0x1FFFFF};
}

constexpr std::uint32_t recompose(const VirtualSplit& s) { return (s.pdpt_index << 30) | (s.pdt_index << 21) | s.offset; }

inline constexpr std::uint32_t kPageSize2M = 1u << 21;
inline constexpr std::uint64_t kPresentBit = 1;

// A raw 64-bit PDPT or PDT entry. Only the present bit is interpreted; the
// other status bits are carried but never checked.
struct PagingEntry {
  std::uint64_t raw = 0;

  bool present() const { return (raw & kPresentBit) != 0; }
  // Base of the next-level table (PDPT entry view).
  std::uint32_t table_base() const { return static_cast<std::uint32_t>(raw) & 0xFFFFF000u; }
  // Base of the mapped 2MiB frame (PDT entry view).
  std::uint32_t frame_base() const { return static_cast<std::uint32_t>(raw) & 0xFFE00000u; }
};

struct Physical {
  std::uint32_t addr = 0;
  friend bool operator==(const Physical&, const Physical&) = default;
};

struct PageFault {
  std::uint32_t virtual_addr = 0;
  int level = 0;  // 1 = PDPT entry not present, 2 = PDT entry not present
  friend bool operator==(const PageFault&, const PageFault&) = default;
};

using TranslationOutcome = std::variant<Physical, PageFault>;

// Little-endian 8-byte physical read. Throws PreconditionError if the entry
// would wrap past 2^32.
std::uint64_t read_entry64(const MachineState& state, std::uint32_t addr);

// Paging applies only in guest mode; otherwise translation is the identity.
bool paging_enabled(const MachineState& state);

TranslationOutcome va_to_pa(std::uint32_t addr, const MachineState& state);

// Physical addresses of a 1, 4 or 8 byte access, translated byte by byte.
struct AccessTranslation {
  std::array<std::uint32_t, 8> bytes{};
  std::uint32_t length = 0;
};

using AccessOutcome = std::variant<AccessTranslation, PageFault>;

AccessOutcome translate_mem_access(const MachineState& state, std::uint32_t base, std::uint32_t length);

}  // namespace y86pp
