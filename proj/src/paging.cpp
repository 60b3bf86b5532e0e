#include "y86pp/paging.hpp"

#include "y86pp/error.hpp"
#include "y86pp/format.hpp"

namespace y86pp {

std::uint64_t read_entry64(const MachineState& state, std::uint32_t addr) {
  if (std::uint64_t{addr} + 7 > 0xFFFFFFFFull) {
    throw PreconditionError("read_entry64: 8-byte read at " + hex32(addr) + " wraps the address space");
  }
  return state.memory.read64(addr);
}

bool paging_enabled(const MachineState& state) { return state.guest_mode; }

TranslationOutcome va_to_pa(std::uint32_t addr, const MachineState& state) {
  if (!paging_enabled(state)) return Physical{addr};

  const VirtualSplit split = split_virtual(addr);
  const std::uint32_t pdpt_base = state.cr3 & 0xFFFFF000u;
  const PagingEntry pdpte{read_entry64(state, pdpt_base + 8 * split.pdpt_index)};
  if (!pdpte.present()) return PageFault{addr, 1};

  const PagingEntry pdte{read_entry64(state, pdpte.table_base() + 8 * split.pdt_index)};
  if (!pdte.present()) return PageFault{addr, 2};

  return Physical{pdte.frame_base() | split.offset};
}

AccessOutcome translate_mem_access(const MachineState& state, std::uint32_t base, std::uint32_t length) {
  if (length != 1 && length != 4 && length != 8) {
    throw PreconditionError("translate_mem_access: access length must be 1, 4 or 8");
  }
  AccessTranslation out;
  out.length = length;
  for (std::uint32_t i = 0; i < length; ++i) {
    const auto outcome = va_to_pa(base + i, state);
    if (const auto* fault = std::get_if<PageFault>(&outcome)) return *fault;
    out.bytes[i] = std::get<Physical>(outcome).addr;
  }
  return out;
}

}  // namespace y86pp
