#include "y86pp/machine.hpp"

#include <sstream>

#include "y86pp/error.hpp"
#include "y86pp/format.hpp"

namespace y86pp {

std::string describe(const FaultInfo& fault) {
  std::ostringstream out;
  switch (fault.kind) {
    case FaultKind::PageFault:
      out << "page fault at " << hex32(fault.address.value_or(0)) << " (level " << fault.level << ")";
      break;
    case FaultKind::DecodeError: out << "decode error"; break;
    case FaultKind::HaltInstr: out << "unexpected halt"; break;
  }
  out << " eip=" << hex32(fault.eip);
  return out.str();
}

MachineState make_initial_state(const Layout& layout) {
  for (std::size_t i = 0; i < layout.regions.size(); ++i) {
    const auto& region = layout.regions[i];
    if (region.contents.size() > region.size) {
      throw ConfigError("layout region '" + region.name + "' contents exceed its size");
    }
    if (region.range().end() > (std::uint64_t{1} << 32)) {
      throw ConfigError("layout region '" + region.name + "' exceeds the 32-bit address space");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (region.range().overlaps(layout.regions[j].range())) {
        throw ConfigError("layout regions '" + layout.regions[j].name + "' and '" + region.name + "' overlap");
      }
    }
  }

  MachineState state;
  for (const auto& region : layout.regions) {
    state.memory.write_block(region.base, region.contents);
  }
  return state;
}

}  // namespace y86pp
