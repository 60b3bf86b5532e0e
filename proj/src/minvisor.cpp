#include "y86pp/minvisor.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "y86pp/error.hpp"
#include "y86pp/format.hpp"

namespace y86pp::minvisor {

namespace {

constexpr std::uint64_t k1G = std::uint64_t{1} << 30;
constexpr std::uint64_t k2M = std::uint64_t{1} << 21;

void put64(MemoryDelta& delta, std::uint32_t addr, std::uint64_t value) {
  for (std::uint32_t i = 0; i < 8; ++i) delta[addr + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

std::uint64_t uniform(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
  return lo + rng() % (hi - lo + 1);
}

}  // namespace

AddressRange pdpt_range(const NptParams& p) { return {p.pdpt_base, kPdptBytes}; }
AddressRange pdt_range(const NptParams& p, std::size_t i) { return {p.pdt_bases.at(i), kPdtBytes}; }
AddressRange pdt_array_range(const NptParams& p) { return {p.pdt_array_base, kPdtArrayBytes}; }
AddressRange stack_window(const NptParams& p) {
  return {p.stack_top - kStackWindow, kStackWindow};
}
AddressRange visor_range(const NptParams& p) { return {p.visor_start, p.visor_size}; }

std::optional<std::string> validation_error(const NptParams& p, std::uint64_t code_bytes) {
  if (p.pdpt_base % 4096 != 0) return "pdpt_base is not 4KiB aligned";
  for (std::size_t i = 0; i < 4; ++i) {
    if (p.pdt_bases[i] % 4096 != 0) return "pdt_base_" + std::to_string(i) + " is not 4KiB aligned";
  }
  if (p.visor_start % k2M != 0) return "visor_start is not 2MiB aligned";
  if (p.visor_size == 0 || p.visor_size % k2M != 0) return "visor_size is not a non-zero multiple of 2MiB";
  const std::uint64_t visor_end = std::uint64_t{p.visor_start} + p.visor_size;
  if (visor_end > (std::uint64_t{1} << 32)) return "protected region extends past 2^32";
  if (p.visor_start / k1G != (visor_end - 1) / k1G) return "protected region crosses a 1GiB boundary";
  if (p.stack_top < kStackWindow) return "stack window wraps below address 0";

  struct Named {
    std::string name;
    AddressRange range;
  };
  std::vector<Named> regions{{"code", {p.code_base, code_bytes}},
                             {"stack", stack_window(p)},
                             {"pdpt", pdpt_range(p)},
                             {"pdt_array", pdt_array_range(p)}};
  for (std::size_t i = 0; i < 4; ++i) regions.push_back({"pdt_" + std::to_string(i), pdt_range(p, i)});
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i].range.end() > (std::uint64_t{1} << 32)) return regions[i].name + " extends past 2^32";
    for (std::size_t j = 0; j < i; ++j) {
      if (regions[i].range.overlaps(regions[j].range)) return regions[j].name + " and " + regions[i].name + " overlap";
    }
  }
  return std::nullopt;
}

void validate(const NptParams& p, std::uint64_t code_bytes) {
  if (auto err = validation_error(p, code_bytes)) throw ConfigError("invalid params: " + *err);
}

bool theorem_eligible(const NptParams& p, std::uint64_t code_bytes) {
  if (validation_error(p, code_bytes)) return false;
  return (std::uint64_t{p.visor_start} + p.visor_size) % k1G != 0;
}

NptParams random_params(std::mt19937_64& rng, std::optional<std::uint32_t> code_base) {
  const std::uint64_t code_bytes = bundle_code_bytes();
  for (;;) {
  // Every region gets its own 8KiB slot below 64MiB.
  constexpr std::uint64_t kSlot = 8192;
  std::set<std::uint64_t> used;
  auto take_slot = [&]() {
    for (;;) {
      const std::uint64_t slot = uniform(rng, 1, 8191);
      if (used.insert(slot).second) return static_cast<std::uint32_t>(slot * kSlot);
    }
  };

  NptParams p;
  p.pdpt_base = take_slot() + static_cast<std::uint32_t>(uniform(rng, 0, 1)) * 4096;
  for (auto& base : p.pdt_bases) base = take_slot() + static_cast<std::uint32_t>(uniform(rng, 0, 1)) * 4096;
  p.pdt_array_base = take_slot() + static_cast<std::uint32_t>(uniform(rng, 0, (kSlot - kPdtArrayBytes) / 4)) * 4;
  p.stack_top = take_slot() + static_cast<std::uint32_t>(uniform(rng, kStackWindow / 16, kSlot / 16)) * 16;
  p.code_base = take_slot() + static_cast<std::uint32_t>(uniform(rng, 0, (kSlot - code_bytes) / 4)) * 4;

  // Region inside one 1GiB quarter that does not end on its upper boundary.
  const std::uint64_t quarter = uniform(rng, 0, 3);
  const std::uint64_t first = uniform(rng, 0, 510);
  const std::uint64_t max_count = 511 - first;
  const std::uint64_t count = (rng() & 1) ? uniform(rng, 1, std::min<std::uint64_t>(max_count, 4))
                                          : uniform(rng, 1, max_count);
  p.visor_start = static_cast<std::uint32_t>(quarter * k1G + first * k2M);
  p.visor_size = static_cast<std::uint32_t>(count * k2M);
  if (code_base) p.code_base = *code_base;
  if (theorem_eligible(p, code_bytes)) return p;
  }
}

NptParams parse_params(std::istream& in) {
  NptParams p;
  std::map<std::string, std::uint32_t*> slots{
      {"pdpt_base", &p.pdpt_base},     {"pdt_base_0", &p.pdt_bases[0]}, {"pdt_base_1", &p.pdt_bases[1]},
      {"pdt_base_2", &p.pdt_bases[2]}, {"pdt_base_3", &p.pdt_bases[3]}, {"pdt_array", &p.pdt_array_base},
      {"visor_start", &p.visor_start}, {"visor_size", &p.visor_size},   {"stack_top", &p.stack_top},
      {"code_base", &p.code_base},
  };
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "params line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    std::istringstream lhs(line.substr(0, eq)), rhs(line.substr(eq + 1));
    std::string key, value, extra;
    if (!(lhs >> key) || (lhs >> extra) || !(rhs >> value) || (rhs >> extra)) {
      throw ConfigError(where + "expected 'key = value'");
    }
    const auto slot = slots.find(key);
    if (slot == slots.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    if (value.starts_with("-") || !parse_u32(value, *slot->second)) {
      throw ConfigError(where + "malformed value '" + value + "'");
    }
  }
  for (const auto& [key, _] : slots) {
    if (!seen.count(key)) throw ConfigError("params: missing key '" + key + "'");
  }
  return p;
}

NptParams read_params_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open params file '" + path + "'");
  return parse_params(in);
}

std::string format_params(const NptParams& p) {
  std::ostringstream out;
  out << "pdpt_base = " << hex32(p.pdpt_base) << '\n';
  for (std::size_t i = 0; i < 4; ++i) out << "pdt_base_" << i << " = " << hex32(p.pdt_bases[i]) << '\n';
  out << "pdt_array = " << hex32(p.pdt_array_base) << '\n'
      << "visor_start = " << hex32(p.visor_start) << '\n'
      << "visor_size = " << p.visor_size << '\n'
      << "stack_top = " << hex32(p.stack_top) << '\n'
      << "code_base = " << hex32(p.code_base) << '\n';
  return out.str();
}

void apply_delta(Memory& memory, const MemoryDelta& delta) {
  for (const auto& [addr, byte] : delta) memory.write8(addr, byte);
}

MemoryDelta oracle_init_pdpt(const NptParams& p) {
  MemoryDelta delta;
  constexpr std::uint32_t page_present = 1;
  for (std::uint32_t i = 0; i < 4; ++i) {
    put64(delta, p.pdpt_base + 8 * i, std::uint64_t{p.pdt_bases[i] | page_present});
  }
  return delta;
}

MemoryDelta oracle_init_pdts(const NptParams& p) {
  MemoryDelta delta;
  std::uint64_t addr = 0;
  for (std::uint32_t i = 0; i < 4; ++i) {
    for (std::uint32_t j = 0; j < 512; ++j) {
      put64(delta, p.pdt_bases[i] + 8 * j, addr | kPdtFlags);
      addr += k2M;
    }
  }
  return delta;
}

MemoryDelta oracle_sec_not_present(const NptParams& p, const Memory& pdpt_snapshot) {
  const std::uint64_t mask = ~std::uint64_t{(1u << 12) - 1};
  const std::uint32_t j = p.visor_start >> 30;
  const std::uint64_t pdpt_entry = pdpt_snapshot.read64(p.pdpt_base + 8 * j);
  const auto pdt = static_cast<std::uint32_t>(pdpt_entry & mask);
  const std::uint32_t start = (p.visor_start & 0x3FE00000u) >> 21;
  const std::uint32_t end = ((p.visor_start + p.visor_size) & 0x3FE00000u) >> 21;

  MemoryDelta delta;
  for (std::uint32_t i = start; i < end; ++i) put64(delta, pdt + 8 * i, 0);
  return delta;
}

MemoryDelta oracle_create_nested_pt(const NptParams& p) {
  MemoryDelta delta = oracle_init_pdpt(p);
  for (const auto& [addr, byte] : oracle_init_pdts(p)) delta[addr] = byte;

  Memory snapshot;
  apply_delta(snapshot, delta);
  for (const auto& [addr, byte] : oracle_sec_not_present(p, snapshot)) delta[addr] = byte;
  return delta;
}

std::string_view function_name(Function fn) {
  switch (fn) {
    case Function::InitPdpt: return "init_pdpt";
    case Function::InitPdts: return "init_pdts";
    case Function::SecNotPresent: return "sec_not_present";
    case Function::CreateNestedPt: return "create_nested_pt";
  }
  return "?";
}

std::optional<Function> function_from_name(std::string_view name) {
  for (Function fn : kAllFunctions) {
    if (function_name(fn) == name) return fn;
  }
  return std::nullopt;
}

std::vector<std::uint32_t> call_arguments(Function fn, const NptParams& p) {
  switch (fn) {
    case Function::InitPdpt: return {p.pdpt_base, p.pdt_array_base};
    case Function::InitPdts: return {p.pdt_array_base};
    case Function::SecNotPresent: return {p.pdpt_base, p.visor_start, p.visor_size};
    case Function::CreateNestedPt: return {p.pdpt_base, p.pdt_array_base, p.visor_start, p.visor_size};
  }
  return {};
}

ProgramImage assemble_programs(std::uint32_t code_base) {
  std::string unit;
  for (Function fn : {Function::CreateNestedPt, Function::InitPdpt, Function::InitPdts, Function::SecNotPresent}) {
    unit += program_source(fn);
    unit += '\n';
  }
  return assemble_text(unit, code_base);
}

std::uint64_t bundle_code_bytes() {
  static const std::uint64_t size = assemble_programs(0).bytes.size() + 1;
  return size;
}

AddressRange function_range(const ProgramImage& image, Function fn) {
  const std::uint32_t begin = image.symbol(std::string(function_name(fn)));
  std::uint64_t end = image.range().end();
  for (Function other : kAllFunctions) {
    const auto it = image.symbols.find(std::string(function_name(other)));
    if (it != image.symbols.end() && it->second > begin && it->second < end) end = it->second;
  }
  return {begin, end - begin};
}

MachineState setup_call(Function fn, const NptParams& p, const ProgramImage& image) {
  const auto name = std::string(function_name(fn));
  if (!image.symbols.count(name)) throw ConfigError("image has no symbol '" + name + "'");
  if (image.base != p.code_base) {
    throw ConfigError("image base " + hex32(image.base) + " differs from code_base " + hex32(p.code_base));
  }
  validate(p, image.bytes.size() + 1);

  std::vector<std::uint8_t> code = image.bytes;
  code.push_back(opcode_of(Mnemonic::Halt));

  std::vector<std::uint8_t> pointer_array;
  for (std::uint32_t base : p.pdt_bases) {
    for (int i = 0; i < 4; ++i) pointer_array.push_back(static_cast<std::uint8_t>(base >> (8 * i)));
  }

  Layout layout;
  layout.regions.push_back({"code", p.code_base, code.size(), code});
  layout.regions.push_back({"stack", stack_window(p).begin, kStackWindow, {}});
  layout.regions.push_back({"pdpt", p.pdpt_base, kPdptBytes, {}});
  for (std::size_t i = 0; i < 4; ++i) layout.regions.push_back({"pdt", p.pdt_bases[i], kPdtBytes, {}});
  layout.regions.push_back({"pdt_array", p.pdt_array_base, kPdtArrayBytes, pointer_array});
  MachineState state = make_initial_state(layout);

  if (fn == Function::SecNotPresent) {
    apply_delta(state.memory, oracle_init_pdpt(p));
    apply_delta(state.memory, oracle_init_pdts(p));
  }

  const auto args = call_arguments(fn, p);
  const std::uint32_t esp = p.stack_top - 4 * static_cast<std::uint32_t>(args.size() + 1);
  state.memory.write32(esp, sentinel_address(image));
  for (std::size_t i = 0; i < args.size(); ++i) state.memory.write32(esp + 4 + 4 * static_cast<std::uint32_t>(i), args[i]);
  state.reg(Reg::ESP) = esp;
  state.reg(Reg::EBP) = p.stack_top;
  state.eip = image.symbol(name);
  return state;
}

MachineState setup_call(Function fn, const NptParams& p) { return setup_call(fn, p, assemble_programs(p.code_base)); }

MachineState setup_call(std::string_view fn, const NptParams& p) {
  const auto known = function_from_name(fn);
  if (!known) throw ConfigError("unknown function '" + std::string(fn) + "'");
  return setup_call(*known, p);
}

MachineState with_nested_paging(MachineState state, std::uint32_t pdpt_base) {
  state.cr3 = pdpt_base;
  state.guest_mode = true;
  return state;
}

}  // namespace y86pp::minvisor
