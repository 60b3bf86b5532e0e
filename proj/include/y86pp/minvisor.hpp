#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "y86pp/assembler.hpp"
#include "y86pp/machine.hpp"

namespace y86pp::minvisor {

// Argument set of create_nested_pt plus where everything lives in memory.
struct NptParams {
  std::uint32_t pdpt_base = 0;
  std::array<std::uint32_t, 4> pdt_bases{};
  std::uint32_t pdt_array_base = 0;  // 4-element u32 pointer array passed as pdt_array
  std::uint32_t visor_start = 0;
  std::uint32_t visor_size = 0;
  std::uint32_t stack_top = 0;  // exclusive; the stack grows down from here
  std::uint32_t code_base = 0;

  friend bool operator==(const NptParams&, const NptParams&) = default;
};

inline constexpr std::uint32_t kPdptBytes = 4 * 8;
inline constexpr std::uint32_t kPdtBytes = 512 * 8;
inline constexpr std::uint32_t kPdtArrayBytes = 4 * 4;
inline constexpr std::uint32_t kStackWindow = 4096;
inline constexpr std::uint64_t kPdtFlags = 1 | 2 | 4 | 32 | 64 | 128;  // 0xE7

AddressRange pdpt_range(const NptParams& p);
AddressRange pdt_range(const NptParams& p, std::size_t i);
AddressRange pdt_array_range(const NptParams& p);
AddressRange stack_window(const NptParams& p);
AddressRange visor_range(const NptParams& p);

// Description of the first violated invariant, or nullopt. `code_bytes` is the
// size of the loaded code including the sentinel halt.
std::optional<std::string> validation_error(const NptParams& p, std::uint64_t code_bytes);
void validate(const NptParams& p, std::uint64_t code_bytes);  // throws ConfigError

// Valid params for which the page-table code actually protects the region.
// sec_not_present computes its end index from (start + size) & 0x3FE00000,
// which is 0 whenever the region ends on a 1GiB boundary (including 2^32), so
// such regions are left mapped.
bool theorem_eligible(const NptParams& p, std::uint64_t code_bytes);

// Random theorem-eligible params, deterministic in the engine state. With a
// fixed `code_base` the other regions are placed around it.
NptParams random_params(std::mt19937_64& rng, std::optional<std::uint32_t> code_base = std::nullopt);

// Key/value params file:
//   pdpt_base = 0x00100000
//   pdt_base_0 .. pdt_base_3, pdt_array, visor_start, stack_top, code_base
//   visor_size = 2097152          (bytes; decimal or 0x-hex)
// `#` starts a comment. Every key is required exactly once. Throws ConfigError.
NptParams parse_params(std::istream& in);
NptParams read_params_file(const std::string& path);
std::string format_params(const NptParams& p);

// Exact set of bytes a function writes, with their final values.
using MemoryDelta = std::map<std::uint32_t, std::uint8_t>;

void apply_delta(Memory& memory, const MemoryDelta& delta);

// Native models of the C page-table functions.
MemoryDelta oracle_init_pdpt(const NptParams& p);
MemoryDelta oracle_init_pdts(const NptParams& p);
// Reads the selected PDPT entry from `pdpt_snapshot`.
MemoryDelta oracle_sec_not_present(const NptParams& p, const Memory& pdpt_snapshot);
MemoryDelta oracle_create_nested_pt(const NptParams& p);

enum class Function : std::uint8_t { InitPdpt, InitPdts, SecNotPresent, CreateNestedPt };

inline constexpr std::array<Function, 4> kAllFunctions{Function::InitPdpt, Function::InitPdts, Function::SecNotPresent,
                                                       Function::CreateNestedPt};

std::string_view function_name(Function fn);
std::optional<Function> function_from_name(std::string_view name);

// Stack arguments in C order.
std::vector<std::uint32_t> call_arguments(Function fn, const NptParams& p);

// Shipped assembly source of one function.
std::string_view program_source(Function fn);

// All four functions assembled as one unit at `code_base`, in the order
// create_nested_pt, init_pdpt, init_pdts, sec_not_present.
ProgramImage assemble_programs(std::uint32_t code_base);

// Size of the assembled bundle plus the sentinel halt byte.
std::uint64_t bundle_code_bytes();

// [symbol, next function symbol or image end) for a function in `image`.
AddressRange function_range(const ProgramImage& image, Function fn);

// The sentinel return address: a halt placed right after the image.
inline std::uint32_t sentinel_address(const ProgramImage& image) {
  return static_cast<std::uint32_t>(image.range().end());
}

// Code, stack, tables and pointer array for a call of `fn`:
//   - image loaded at its base, halt at the sentinel address
//   - pdt_array materialized; for sec_not_present the PDPT and PDTs are
//     pre-built by the init oracles
//   - arguments pushed right to left above the sentinel return address,
//     esp = stack_top - 4 * (args + 1), ebp = stack_top, eip = fn
// Throws ConfigError for invalid params or an unknown function symbol.
MachineState setup_call(Function fn, const NptParams& p, const ProgramImage& image);
MachineState setup_call(Function fn, const NptParams& p);
MachineState setup_call(std::string_view fn, const NptParams& p);

// Turns on guest-mode paging with cr3 at the PDPT.
MachineState with_nested_paging(MachineState state, std::uint32_t pdpt_base);

}  // namespace y86pp::minvisor
