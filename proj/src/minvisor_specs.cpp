#include "y86pp/minvisor_specs.hpp"

#include <algorithm>
#include <array>

#include "y86pp/error.hpp"
#include "y86pp/format.hpp"
#include "y86pp/isa.hpp"
#include "y86pp/paging.hpp"

namespace y86pp::minvisor {

namespace {

using cutpoint::CutpointSpec;
using Violation = std::optional<std::string>;

constexpr std::uint64_t k4G = std::uint64_t{1} << 32;
constexpr std::uint64_t k1G = std::uint64_t{1} << 30;
constexpr std::uint32_t k2M = 1u << 21;

// Flags of b + a and b - a from 64-bit arithmetic, kept apart from alu_exec.
Flags wide_add_flags(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t wide = std::uint64_t{a} + b;
  const auto r = static_cast<std::uint32_t>(wide);
  const std::int64_t signed_sum = std::int64_t{static_cast<std::int32_t>(a)} + static_cast<std::int32_t>(b);
  return Flags{r == 0, (r >> 31) != 0, signed_sum != static_cast<std::int32_t>(r), (wide >> 32) != 0};
}

Flags wide_sub_flags(std::uint32_t a, std::uint32_t b) {
  const auto r = b - a;
  const std::int64_t signed_diff = std::int64_t{static_cast<std::int32_t>(b)} - static_cast<std::int32_t>(a);
  return Flags{r == 0, (r >> 31) != 0, signed_diff != static_cast<std::int32_t>(r), b < a};
}

// Byte image of a memory window, to be patched with expected writes and
// compared against another state.
class ExpectedBytes {
 public:
  ExpectedBytes(const Memory& from, std::uint32_t base, std::uint32_t size) : base_(base), bytes_(size) {
    from.read_block(base, bytes_);
  }

  void put32(std::uint32_t addr, std::uint32_t v) {
    for (std::uint32_t i = 0; i < 4; ++i) bytes_.at(addr + i - base_) = static_cast<std::uint8_t>(v >> (8 * i));
  }
  void put64(std::uint32_t addr, std::uint64_t v) {
    put32(addr, static_cast<std::uint32_t>(v));
    put32(addr + 4, static_cast<std::uint32_t>(v >> 32));
  }

  Violation compare(const Memory& actual, const std::string& what) const {
    std::vector<std::uint8_t> got(bytes_.size());
    actual.read_block(base_, got);
    if (got == bytes_) return std::nullopt;
    const auto diff = std::mismatch(got.begin(), got.end(), bytes_.begin());
    const auto offset = static_cast<std::uint32_t>(diff.first - got.begin());
    return what + " byte " + hex32(base_ + offset) + ": got " + hex8(*diff.first) + ", expected " + hex8(*diff.second);
  }

  void write_to(Memory& m) const { m.write_block(base_, bytes_); }

  AddressRange range() const { return {base_, bytes_.size()}; }

 private:
  std::uint32_t base_;
  std::vector<std::uint8_t> bytes_;
};

// Facts a bundle needs about its image.
struct Code {
  ProgramImage image;
  std::uint32_t entry = 0;
  std::uint32_t sentinel = 0;
  AddressRange body;                 // the function's own instructions
  std::vector<std::uint32_t> heads;  // loop-head addresses, in loop_heads() order
};

Code code_facts(Function fn, const ProgramImage& image) {
  Code c;
  c.image = image;
  c.entry = image.symbol(std::string(function_name(fn)));
  c.sentinel = sentinel_address(image);
  c.body = function_range(image, fn);
  for (const auto& label : loop_heads(fn)) c.heads.push_back(image.symbol(label));
  return c;
}

std::size_t arg_count(Function fn) { return call_arguments(fn, NptParams{}).size(); }

// Call-site view of an entry state: return address and stack arguments.
struct CallView {
  std::uint32_t esp = 0;
  std::uint32_t ret = 0;
  std::vector<std::uint32_t> args;
  std::uint64_t stack_top = 0;  // one past the last argument
};

CallView call_view(Function fn, const MachineState& s0) {
  CallView v;
  v.esp = s0.reg(Reg::ESP);
  v.ret = s0.memory.read32(v.esp);
  for (std::size_t i = 0; i < arg_count(fn); ++i) {
    v.args.push_back(s0.memory.read32(v.esp + 4 + 4 * static_cast<std::uint32_t>(i)));
  }
  v.stack_top = std::uint64_t{v.esp} + 4 * (arg_count(fn) + 1);
  return v;
}

// Parameters recoverable from an entry state. Fields a function does not
// receive stay zero and are never read by its oracle.
NptParams params_from_entry(Function fn, const MachineState& s0) {
  const CallView v = call_view(fn, s0);
  NptParams p;
  p.stack_top = static_cast<std::uint32_t>(v.stack_top);
  switch (fn) {
    case Function::InitPdpt:
      p.pdpt_base = v.args[0];
      p.pdt_array_base = v.args[1];
      break;
    case Function::InitPdts: p.pdt_array_base = v.args[0]; break;
    case Function::SecNotPresent:
      p.pdpt_base = v.args[0];
      p.visor_start = v.args[1];
      p.visor_size = v.args[2];
      break;
    case Function::CreateNestedPt:
      p.pdpt_base = v.args[0];
      p.pdt_array_base = v.args[1];
      p.visor_start = v.args[2];
      p.visor_size = v.args[3];
      break;
  }
  if (fn != Function::SecNotPresent) {
    for (std::uint32_t i = 0; i < 4; ++i) p.pdt_bases[i] = s0.memory.read32(p.pdt_array_base + 4 * i);
  }
  return p;
}

// Base of the PDT that sec_not_present clears.
std::uint32_t selected_pdt(const NptParams& p, const Memory& m) {
  return PagingEntry{m.read64(p.pdpt_base + 8 * (p.visor_start >> 30))}.table_base();
}

struct NamedRange {
  std::string name;
  AddressRange range;
  bool page_aligned = true;
};

// Tables and pointer array a function reads or writes.
std::vector<NamedRange> table_regions(Function fn, const NptParams& p, const Memory& m) {
  std::vector<NamedRange> out;
  if (fn != Function::InitPdts) out.push_back({"pdpt", pdpt_range(p)});
  if (fn != Function::SecNotPresent) out.push_back({"pdt_array", pdt_array_range(p), false});
  if (fn == Function::InitPdts || fn == Function::CreateNestedPt) {
    for (std::size_t i = 0; i < 4; ++i) out.push_back({"pdt_" + std::to_string(i), pdt_range(p, i)});
  }
  if (fn == Function::SecNotPresent) out.push_back({"pdt", {selected_pdt(p, m), kPdtBytes}});
  return out;
}

std::vector<AddressRange> written_tables(Function fn, const NptParams& p, const Memory& m) {
  std::vector<AddressRange> out;
  for (const auto& r : table_regions(fn, p, m)) {
    if (r.name != "pdt_array") out.push_back(r.range);
  }
  return out;
}

// Well-formed running state; code loaded; poised at the entry with the
// sentinel as return address; paging off; code, stack and tables disjoint;
// tables 4KiB aligned; protected region 2MiB aligned, a non-zero multiple of
// 2MiB and inside 32 bits; stack not wrapping.
Violation precondition_violation(Function fn, const Code& code, const MachineState& s0) {
  if (!s0.running() || s0.fault) return "machine is not running";
  if (s0.guest_mode) return "paging is on";
  if (s0.eip != code.entry) return "eip is not at the entry of " + std::string(function_name(fn));

  std::vector<std::uint8_t> loaded(code.image.bytes.size() + 1);
  s0.memory.read_block(code.image.base, loaded);
  if (!std::equal(code.image.bytes.begin(), code.image.bytes.end(), loaded.begin()) ||
      loaded.back() != opcode_of(Mnemonic::Halt)) {
    return "code is not loaded";
  }

  const CallView v = call_view(fn, s0);
  if (v.ret != code.sentinel) return "return address is not the sentinel";
  if (v.stack_top > k4G || v.stack_top < kStackWindow) return "stack wraps";

  const NptParams p = params_from_entry(fn, s0);
  if (fn == Function::SecNotPresent &&
      !PagingEntry{s0.memory.read64(p.pdpt_base + 8 * (p.visor_start >> 30))}.present()) {
    return "selected PDPT entry is not present";
  }

  auto regions = table_regions(fn, p, s0.memory);
  for (const auto& r : regions) {
    if (r.page_aligned && r.range.begin % 4096 != 0) return r.name + " is not 4KiB aligned";
  }
  regions.push_back({"code", {code.image.base, code.image.bytes.size() + 1}, false});
  regions.push_back({"stack", {static_cast<std::uint32_t>(v.stack_top - kStackWindow), kStackWindow}, false});
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i].range.end() > k4G) return regions[i].name + " does not fit in 32 bits";
    for (std::size_t j = 0; j < i; ++j) {
      if (regions[i].range.overlaps(regions[j].range)) return regions[j].name + " and " + regions[i].name + " overlap";
    }
  }

  if (fn == Function::SecNotPresent || fn == Function::CreateNestedPt) {
    if (p.visor_start % k2M != 0) return "visor_start is not 2MiB aligned";
    if (p.visor_size == 0 || p.visor_size % k2M != 0) return "visor_size is not a non-zero multiple of 2MiB";
    const std::uint64_t end = std::uint64_t{p.visor_start} + p.visor_size;
    if (end > k4G) return "protected region does not fit in 32 bits";
    if (p.visor_start / k1G != (end - 1) / k1G) return "protected region crosses a 1GiB boundary";
  }
  return std::nullopt;
}

// Components no shipped function touches.
Violation untouched_components(const MachineState& s0, const MachineState& s1) {
  if (!s1.running()) return "machine stopped";
  if (s1.reg(Reg::EDI) != s0.reg(Reg::EDI)) return "edi changed";
  if (s1.cr3 != s0.cr3 || s1.guest_mode != s0.guest_mode || s1.shadow != s0.shadow) return "system state changed";
  return std::nullopt;
}

Violation check_reg(const MachineState& s, Reg r, std::uint32_t expected) {
  if (s.reg(r) == expected) return std::nullopt;
  return std::string(register_name(r)) + " is " + hex32(s.reg(r)) + ", expected " + hex32(expected);
}

Violation frame_unchanged(const MachineState& s0, const MachineState& s1, const std::vector<AddressRange>& excluded) {
  if (auto addr = s1.memory.first_difference(s0.memory, excluded)) return "unexpected write at " + hex32(*addr);
  return std::nullopt;
}

Violation entry_assertion(const MachineState& s0, const MachineState& s1) {
  if (auto d = cutpoint::state_difference(s1, s0)) return "entry state differs from s0: " + *d;
  return std::nullopt;
}

// Shared loop-head checks: frame registers, stack scratch, written tables,
// and an unchanged frame everywhere else.
Violation loop_state(const MachineState& s0, const MachineState& s1, std::uint32_t frame_size,
                     const ExpectedBytes& scratch, const std::vector<ExpectedBytes>& tables) {
  if (auto bad = untouched_components(s0, s1)) return bad;
  const std::uint32_t ebp = s0.reg(Reg::ESP) - 4;
  if (auto bad = check_reg(s1, Reg::EBP, ebp)) return bad;
  if (auto bad = check_reg(s1, Reg::ESP, ebp - frame_size)) return bad;
  if (auto bad = scratch.compare(s1.memory, "stack frame")) return bad;
  std::vector<AddressRange> excluded{scratch.range()};
  for (const auto& t : tables) {
    if (auto bad = t.compare(s1.memory, "table")) return bad;
    excluded.push_back(t.range());
  }
  return frame_unchanged(s0, s1, excluded);
}

void finish_return(MachineState& m, const MachineState& s0) {
  m.reg(Reg::ESP) = s0.reg(Reg::ESP) + 4;
  m.eip = s0.memory.read32(s0.reg(Reg::ESP));
}

// ---------------------------------------------------------------- init_pdpt
// ebp = esp0 - 4, esp = ebp - 16. Locals: -16/-12 page_present, -4 i.

constexpr std::uint32_t kInitPdptFrame = 16;

ExpectedBytes init_pdpt_scratch(const MachineState& s0, std::uint32_t i) {
  const std::uint32_t ebp = s0.reg(Reg::ESP) - 4;
  ExpectedBytes e(s0.memory, ebp - kInitPdptFrame, kInitPdptFrame + 4);
  e.put32(ebp, s0.reg(Reg::EBP));
  e.put64(ebp - 16, 1);
  e.put32(ebp - 4, i);
  return e;
}

ExpectedBytes init_pdpt_table(const MachineState& s0, const NptParams& p, std::uint32_t done) {
  ExpectedBytes e(s0.memory, p.pdpt_base, kPdptBytes);
  for (std::uint32_t k = 0; k < done && k < 4; ++k) e.put64(p.pdpt_base + 8 * k, std::uint64_t{p.pdt_bases[k] | 1u});
  return e;
}

Violation init_pdpt_assertion(const Code& code, const MachineState& s0, const MachineState& s1) {
  if (s1.eip == code.entry) return entry_assertion(s0, s1);
  if (s1.eip != code.heads.at(0)) return "no assertion at " + hex32(s1.eip);
  const NptParams p = params_from_entry(Function::InitPdpt, s0);
  const std::uint32_t i = s1.memory.read32(s0.reg(Reg::ESP) - 8);
  if (i > 4) return "counter " + std::to_string(i) + " out of range";
  return loop_state(s0, s1, kInitPdptFrame, init_pdpt_scratch(s0, i), {init_pdpt_table(s0, p, i)});
}

MachineState init_pdpt_modify(const MachineState& s0) {
  const NptParams p = params_from_entry(Function::InitPdpt, s0);
  const std::uint32_t esp0 = s0.reg(Reg::ESP);
  MachineState m = s0;
  apply_delta(m.memory, oracle_init_pdpt(p));
  init_pdpt_scratch(s0, 4).write_to(m.memory);
  m.reg(Reg::EAX) = p.pdt_bases[3] | 1u;
  m.reg(Reg::ECX) = p.pdpt_base + 24;
  m.reg(Reg::EDX) = 0;
  m.reg(Reg::IMME1) = 3;
  m.reg(Reg::VALU1) = kInitPdptFrame;
  m.flags = wide_add_flags(kInitPdptFrame, esp0 - 4 - kInitPdptFrame);
  finish_return(m, s0);
  return m;
}

// ---------------------------------------------------------------- init_pdts
// ebp = esp0 - 4; saved esi/ebx at -4/-8; esp = ebp - 56.
// Locals: -48/-44 addr, -36 pdt, -32 i, -28 j, -24/-20 flags, -16/-12 page size.

constexpr std::uint32_t kInitPdtsFrame = 56;

// Scratch after the outer counter reached i (and, inside the inner loop, the
// inner counter reached j).
ExpectedBytes init_pdts_scratch(const MachineState& s0, const NptParams& p, std::uint32_t i,
                                std::optional<std::uint32_t> j) {
  const std::uint32_t ebp = s0.reg(Reg::ESP) - 4;
  ExpectedBytes e(s0.memory, ebp - kInitPdtsFrame, kInitPdtsFrame + 4);
  e.put32(ebp, s0.reg(Reg::EBP));
  e.put32(ebp - 4, s0.reg(Reg::ESI));
  e.put32(ebp - 8, s0.reg(Reg::EBX));
  e.put64(ebp - 24, kPdtFlags);
  e.put64(ebp - 16, k2M);
  e.put32(ebp - 32, i);
  e.put64(ebp - 48, (std::uint64_t{i} * 512 + j.value_or(0)) * k2M);
  if (j) {
    e.put32(ebp - 36, p.pdt_bases[i]);
    e.put32(ebp - 28, *j);
  } else if (i > 0) {
    e.put32(ebp - 36, p.pdt_bases[i - 1]);
    e.put32(ebp - 28, 512);
  }
  return e;
}

std::vector<ExpectedBytes> init_pdts_tables(const MachineState& s0, const NptParams& p, std::uint64_t done) {
  std::vector<ExpectedBytes> out;
  for (std::uint32_t t = 0; t < 4; ++t) {
    ExpectedBytes table(s0.memory, p.pdt_bases[t], kPdtBytes);
    for (std::uint32_t k = 0; k < 512; ++k) {
      const std::uint64_t global = std::uint64_t{t} * 512 + k;
      if (global < done) table.put64(p.pdt_bases[t] + 8 * k, (global << 21) | kPdtFlags);
    }
    out.push_back(std::move(table));
  }
  return out;
}

Violation init_pdts_assertion(const Code& code, const MachineState& s0, const MachineState& s1) {
  if (s1.eip == code.entry) return entry_assertion(s0, s1);
  const bool outer = s1.eip == code.heads.at(0);  // L7
  const bool inner = s1.eip == code.heads.at(1);  // L9
  if (!outer && !inner) return "no assertion at " + hex32(s1.eip);

  const std::uint32_t ebp = s0.reg(Reg::ESP) - 4;
  const NptParams p = params_from_entry(Function::InitPdts, s0);
  const std::uint32_t i = s1.memory.read32(ebp - 32);
  std::optional<std::uint32_t> j;
  if (outer && i > 4) return "outer counter " + std::to_string(i) + " out of range";
  if (inner) {
    j = s1.memory.read32(ebp - 28);
    if (i > 3) return "outer counter " + std::to_string(i) + " out of range in the inner loop";
    if (*j > 512) return "inner counter " + std::to_string(*j) + " out of range";
  }
  const std::uint64_t done = std::uint64_t{i} * 512 + j.value_or(0);
  return loop_state(s0, s1, kInitPdtsFrame, init_pdts_scratch(s0, p, i, j), init_pdts_tables(s0, p, done));
}

MachineState init_pdts_modify(const MachineState& s0) {
  const NptParams p = params_from_entry(Function::InitPdts, s0);
  const std::uint32_t esp0 = s0.reg(Reg::ESP);
  MachineState m = s0;
  apply_delta(m.memory, oracle_init_pdts(p));
  init_pdts_scratch(s0, p, 4, std::nullopt).write_to(m.memory);
  m.reg(Reg::EAX) = k2M;
  m.reg(Reg::ECX) = static_cast<std::uint32_t>(kPdtFlags);
  m.reg(Reg::EDX) = 0;
  m.reg(Reg::IMME1) = 3;
  m.reg(Reg::VALU1) = 48;
  m.flags = wide_add_flags(48, esp0 - 4 - kInitPdtsFrame);
  finish_return(m, s0);
  return m;
}

// ---------------------------------------------------------- sec_not_present
// ebp = esp0 - 4, esp = ebp - 64. Locals: -16/-12 mask, -20 j, -32/-28
// pdpt_entry, -40/-36 tmp, -44 tmp32, -48 pdt, -52 start, -56 end, -60 i.

constexpr std::uint32_t kSecFrame = 64;

struct SecValues {
  std::uint32_t j = 0;
  std::uint64_t pdpt_entry = 0;
  std::uint32_t pdt = 0;
  std::uint32_t start = 0;
  std::uint32_t end = 0;
};

SecValues sec_values(const MachineState& s0) {
  const NptParams p = params_from_entry(Function::SecNotPresent, s0);
  SecValues v;
  v.j = p.visor_start >> 30;
  v.pdpt_entry = s0.memory.read64(p.pdpt_base + 8 * v.j);
  v.pdt = static_cast<std::uint32_t>(v.pdpt_entry) & 0xFFFFF000u;
  v.start = (p.visor_start & 0x3FE00000u) >> 21;
  v.end = ((p.visor_start + p.visor_size) & 0x3FE00000u) >> 21;
  return v;
}

ExpectedBytes sec_scratch(const MachineState& s0, const SecValues& v, std::uint32_t i) {
  const std::uint32_t ebp = s0.reg(Reg::ESP) - 4;
  ExpectedBytes e(s0.memory, ebp - kSecFrame, kSecFrame + 4);
  e.put32(ebp, s0.reg(Reg::EBP));
  e.put64(ebp - 16, ~std::uint64_t{0xFFF});
  e.put32(ebp - 20, v.j);
  e.put64(ebp - 32, v.pdpt_entry);
  e.put64(ebp - 40, v.pdpt_entry & ~std::uint64_t{0xFFF});
  e.put32(ebp - 44, v.pdt);
  e.put32(ebp - 48, v.pdt);
  e.put32(ebp - 52, v.start);
  e.put32(ebp - 56, v.end);
  e.put32(ebp - 60, i);
  return e;
}

ExpectedBytes sec_table(const MachineState& s0, const SecValues& v, std::uint32_t cleared_to) {
  ExpectedBytes e(s0.memory, v.pdt, kPdtBytes);
  for (std::uint32_t k = v.start; k < cleared_to; ++k) e.put64(v.pdt + 8 * k, 0);
  return e;
}

Violation sec_assertion(const Code& code, const MachineState& s0, const MachineState& s1) {
  if (s1.eip == code.entry) return entry_assertion(s0, s1);
  if (s1.eip != code.heads.at(0)) return "no assertion at " + hex32(s1.eip);
  const SecValues v = sec_values(s0);
  const std::uint32_t i = s1.memory.read32(s0.reg(Reg::ESP) - 4 - 60);
  if (i < v.start || i > std::max(v.start, v.end)) return "counter " + std::to_string(i) + " out of range";
  return loop_state(s0, s1, kSecFrame, sec_scratch(s0, v, i), {sec_table(s0, v, i)});
}

MachineState sec_modify(const MachineState& s0) {
  const NptParams p = params_from_entry(Function::SecNotPresent, s0);
  const SecValues v = sec_values(s0);
  const std::uint32_t last = std::max(v.start, v.end);
  const std::uint32_t esp0 = s0.reg(Reg::ESP);
  MachineState m = s0;
  apply_delta(m.memory, oracle_sec_not_present(p, s0.memory));
  sec_scratch(s0, v, last).write_to(m.memory);
  m.reg(Reg::EAX) = last;
  m.reg(Reg::EDX) = static_cast<std::uint32_t>(v.pdpt_entry >> 32);
  m.reg(Reg::IMME1) = v.start < v.end ? 1 : 21;
  m.reg(Reg::VALU1) = kSecFrame;
  m.flags = wide_add_flags(kSecFrame, esp0 - 4 - kSecFrame);
  finish_return(m, s0);
  return m;
}

// --------------------------------------------------------- create_nested_pt
// ebp = esp0 - 4, esp = ebp - 24; outgoing arguments at esp+0/4/8. Each call
// is summarized by the callee's own modify function.

constexpr std::uint32_t kCreateFrame = 24;

std::vector<std::uint32_t> return_points(const Code& code) {
  std::vector<std::uint32_t> out;
  std::uint64_t addr = code.body.begin;
  while (addr < code.body.end()) {
    const auto offset = static_cast<std::size_t>(addr - code.image.base);
    const auto decoded = decode_bytes(std::span<const std::uint8_t>(code.image.bytes).subspan(offset));
    if (!decoded.instruction) break;
    addr += encoded_length(*decoded.instruction);
    if (decoded.instruction->mnemonic == Mnemonic::Call) out.push_back(static_cast<std::uint32_t>(addr));
  }
  return out;
}

MachineState create_modify(const Code& code, const MachineState& s0) {
  const auto returns = return_points(code);
  if (returns.size() != 3) throw Error("create_nested_pt: expected three calls, found " + std::to_string(returns.size()));
  const std::uint32_t esp0 = s0.reg(Reg::ESP);
  const std::uint32_t ebp = esp0 - 4;
  const std::uint32_t esp = ebp - kCreateFrame;
  const std::uint32_t pdpt = s0.memory.read32(esp0 + 4);
  const std::uint32_t pdt_array = s0.memory.read32(esp0 + 8);

  MachineState m = s0;
  m.memory.write32(ebp, s0.reg(Reg::EBP));
  m.reg(Reg::EBP) = ebp;
  m.reg(Reg::IMME1) = kCreateFrame;
  m.flags = wide_sub_flags(kCreateFrame, ebp);
  m.reg(Reg::ESP) = esp;

  auto call = [&](std::uint32_t ret, MachineState (*callee)(const MachineState&)) {
    m.memory.write32(esp - 4, ret);
    m.reg(Reg::ESP) = esp - 4;
    m = callee(m);
  };

  m.memory.write32(esp + 4, pdt_array);
  m.memory.write32(esp, pdpt);
  m.reg(Reg::EAX) = pdpt;
  call(returns[0], init_pdpt_modify);

  m.memory.write32(esp, pdt_array);
  m.reg(Reg::EAX) = pdt_array;
  call(returns[1], init_pdts_modify);

  m.memory.write32(esp + 8, s0.memory.read32(esp0 + 16));
  m.memory.write32(esp + 4, s0.memory.read32(esp0 + 12));
  m.memory.write32(esp, pdpt);
  m.reg(Reg::EAX) = pdpt;
  call(returns[2], sec_modify);

  m.reg(Reg::EAX) = pdpt;
  m.reg(Reg::EBP) = s0.reg(Reg::EBP);
  finish_return(m, s0);
  return m;
}

Violation create_assertion(const Code& code, const MachineState& s0, const MachineState& s1) {
  if (s1.eip == code.entry) return entry_assertion(s0, s1);
  return "no assertion at " + hex32(s1.eip);
}

cutpoint::ModifyFunction modify_for(Function fn, const Code& code) {
  switch (fn) {
    case Function::InitPdpt: return init_pdpt_modify;
    case Function::InitPdts: return init_pdts_modify;
    case Function::SecNotPresent: return sec_modify;
    case Function::CreateNestedPt: return [code](const MachineState& s0) { return create_modify(code, s0); };
  }
  throw Error("unknown function");
}

cutpoint::Assertion assertion_for(Function fn, const Code& code) {
  using Fn = Violation (*)(const Code&, const MachineState&, const MachineState&);
  Fn f = nullptr;
  switch (fn) {
    case Function::InitPdpt: f = init_pdpt_assertion; break;
    case Function::InitPdts: f = init_pdts_assertion; break;
    case Function::SecNotPresent: f = sec_assertion; break;
    case Function::CreateNestedPt: f = create_assertion; break;
  }
  return [f, code](const MachineState& s0, const MachineState& s1) { return f(code, s0, s1); };
}

}  // namespace

std::vector<std::string> loop_heads(Function fn) {
  switch (fn) {
    case Function::InitPdpt: return {"L12"};
    case Function::InitPdts: return {"L7", "L9"};
    case Function::SecNotPresent: return {"L2"};
    case Function::CreateNestedPt: return {};
  }
  return {};
}

CutpointSpec make_spec(Function fn, const ProgramImage& image) {
  const Code code = code_facts(fn, image);
  CutpointSpec spec;
  spec.name = std::string(function_name(fn));
  spec.precondition = [fn, code](const MachineState& s) { return !precondition_violation(fn, code, s); };
  spec.in_main = [body = code.body](const MachineState& s) { return body.contains(s.eip); };
  spec.cutpoint = [code](const MachineState& s) {
    return s.eip == code.entry || s.eip == code.sentinel ||
           std::find(code.heads.begin(), code.heads.end(), s.eip) != code.heads.end();
  };
  spec.exit = [sentinel = code.sentinel](const MachineState& s) { return s.running() && s.eip == sentinel; };
  spec.assertion = assertion_for(fn, code);
  spec.modify = modify_for(fn, code);
  spec.write_set = [fn, code](const MachineState& s0, std::uint32_t low_water) {
    const NptParams p = params_from_entry(fn, s0);
    std::vector<AddressRange> out = written_tables(fn, p, s0.memory);
    out.push_back({code.image.base, code.image.bytes.size() + 1});
    const std::uint64_t top = call_view(fn, s0).stack_top;
    if (low_water < top) out.push_back({low_water, top - low_water});
    return out;
  };
  spec.step_bound = fn == Function::CreateNestedPt ? 200000 : 10000;
  spec.exit_steps = 200000;
  return spec;
}

cutpoint::TrialSource trial_source(Function fn, const ProgramImage& image) {
  cutpoint::TrialSource source;
  source.params = [base = image.base](std::mt19937_64& rng) { return random_params(rng, base); };
  source.initial_state = [fn, image](const NptParams& p) { return setup_call(fn, p, image); };
  return source;
}

std::vector<std::uint32_t> cutpoint_addresses(Function fn, const ProgramImage& image) {
  const Code code = code_facts(fn, image);
  std::vector<std::uint32_t> out{code.entry};
  out.insert(out.end(), code.heads.begin(), code.heads.end());
  out.push_back(code.sentinel);
  return out;
}

std::optional<std::string> cutpoint_coverage_gap(Function fn, const ProgramImage& image,
                                                 const std::vector<std::uint32_t>& cutpoints) {
  const AddressRange body = function_range(image, fn);
  std::uint64_t addr = body.begin;
  while (addr < body.end()) {
    const auto offset = static_cast<std::size_t>(addr - image.base);
    const auto decoded = decode_bytes(std::span<const std::uint8_t>(image.bytes).subspan(offset));
    if (!decoded.instruction) throw DecodeError(offset, "undecodable byte in " + std::string(function_name(fn)));
    const Instruction& insn = *decoded.instruction;
    const std::uint64_t next = addr + encoded_length(insn);
    const bool jump = insn.mnemonic == Mnemonic::Jmp || is_conditional_jump(insn.mnemonic);
    if (jump && insn.value <= addr) {
      const bool cut = std::any_of(cutpoints.begin(), cutpoints.end(),
                                   [&](std::uint32_t c) { return c >= insn.value && c <= addr; });
      if (!cut) return "loop " + hex32(insn.value) + ".." + hex32(static_cast<std::uint32_t>(addr)) + " has no cutpoint";
    }
    addr = next;
  }
  return std::nullopt;
}

}  // namespace y86pp::minvisor
