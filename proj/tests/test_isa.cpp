#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "y86pp/assembler.hpp"
#include "y86pp/cpu.hpp"
#include "y86pp/error.hpp"
#include "y86pp/isa.hpp"
#include "y86pp/machine.hpp"

using namespace y86pp;

namespace {

MachineState with_code(std::uint32_t base, const std::vector<std::uint8_t>& bytes) {
  MachineState s;
  s.memory.write_block(base, bytes);
  s.eip = base;
  return s;
}

MachineState with_program(const std::string& text, std::uint32_t base = 0x100) {
  const ProgramImage image = assemble_text(text, base);
  return with_code(base, image.bytes);
}

}  // namespace

TEST_CASE("opcode table") {
  const std::pair<const char*, int> table[] = {
      {"halt", 0x00}, {"nop", 0x10},  {"rrmovl", 0x20}, {"irmovl", 0x30}, {"rmmovl", 0x40}, {"mrmovl", 0x50},
      {"addl", 0x60}, {"subl", 0x61}, {"andl", 0x62},   {"xorl", 0x63},   {"orl", 0x64},    {"adcl", 0x65},
      {"cmpl", 0x66}, {"sall", 0x67}, {"shrl", 0x68},   {"jmp", 0x70},    {"jle", 0x71},    {"jl", 0x72},
      {"je", 0x73},   {"jne", 0x74},  {"jge", 0x75},    {"jg", 0x76},     {"jb", 0x77},     {"jbe", 0x78},
      {"call", 0x80}, {"ret", 0x90},  {"pushl", 0xA0},  {"popl", 0xB0},
  };
  for (const auto& [name, op] : table) {
    CAPTURE(name);
    const auto m = mnemonic_from_name(name);
    REQUIRE(m);
    CHECK(opcode_of(*m) == op);
    CHECK(mnemonic_from_opcode(static_cast<std::uint8_t>(op)) == m);
    CHECK(mnemonic_name(*m) == name);
  }
  CHECK_FALSE(mnemonic_from_opcode(0xC0));
  CHECK_FALSE(mnemonic_from_opcode(0x69));
  CHECK_FALSE(mnemonic_from_opcode(0x79));
}

TEST_CASE("encoded lengths") {
  CHECK(encoded_length(Mnemonic::Halt) == 1);
  CHECK(encoded_length(Mnemonic::Ret) == 1);
  CHECK(encoded_length(Mnemonic::Rrmovl) == 2);
  CHECK(encoded_length(Mnemonic::Adcl) == 2);
  CHECK(encoded_length(Mnemonic::Pushl) == 2);
  CHECK(encoded_length(Mnemonic::Jbe) == 5);
  CHECK(encoded_length(Mnemonic::Call) == 5);
  CHECK(encoded_length(Mnemonic::Irmovl) == 6);
  CHECK(encoded_length(Mnemonic::Rmmovl) == 6);
  CHECK(encoded_length(Mnemonic::Mrmovl) == 6);
}

TEST_CASE("decode examples") {
  SUBCASE("ret") {
    const std::uint8_t bytes[] = {0x90};
    const auto d = decode_bytes(bytes);
    REQUIRE(d.instruction);
    CHECK(d.instruction->mnemonic == Mnemonic::Ret);
    CHECK(encoded_length(*d.instruction) == 1);
  }
  SUBCASE("irmovl 231 into imme1") {
    const std::uint8_t bytes[] = {0x30, 0xF8, 0xE7, 0x00, 0x00, 0x00};
    const auto d = decode_bytes(bytes);
    REQUIRE(d.instruction);
    CHECK(*d.instruction == Instruction{Mnemonic::Irmovl, Reg::None, Reg::IMME1, 231});
    CHECK(encoded_length(*d.instruction) == 6);
  }
  SUBCASE("unassigned opcode faults the machine") {
    MachineState s = with_code(0x200, {0xC0});
    CHECK(std::holds_alternative<FaultInfo>(decode(s)));
    s = step(s);
    CHECK(s.status == RunStatus::Faulted);
    REQUIRE(s.fault);
    CHECK(s.fault->kind == FaultKind::DecodeError);
    CHECK(s.fault->eip == 0x200);
  }
  SUBCASE("bad register nibble") {
    const std::uint8_t bytes[] = {0x20, 0xA1};
    const auto d = decode_bytes(bytes);
    CHECK_FALSE(d.instruction);
    CHECK(d.failure == DecodeFailure::BadRegister);
  }
  SUBCASE("irmovl with a source register is rejected") {
    const std::uint8_t bytes[] = {0x30, 0x08, 0, 0, 0, 0};
    CHECK_FALSE(decode_bytes(bytes).instruction);
  }
  SUBCASE("truncated") {
    const std::uint8_t bytes[] = {0x30, 0xF8, 0xE7};
    const auto d = decode_bytes(bytes);
    CHECK_FALSE(d.instruction);
    CHECK(d.failure == DecodeFailure::Truncated);
  }
}

TEST_CASE("encode/decode round trip over every mnemonic") {
  std::mt19937_64 rng(7);
  for (int op = 0; op < 256; ++op) {
    const auto m = mnemonic_from_opcode(static_cast<std::uint8_t>(op));
    if (!m) continue;
    for (int k = 0; k < 50; ++k) {
      Instruction insn{*m, Reg::None, Reg::None, 0};
      const auto reg = [&] { return static_cast<Reg>(rng() % kRegisterCount); };
      switch (form_of(*m)) {
        case Form::NoOperands: break;
        case Form::RegReg: insn.ra = reg(); insn.rb = reg(); break;
        case Form::ImmReg: insn.rb = reg(); insn.value = static_cast<std::uint32_t>(rng()); break;
        case Form::RegMem:
        case Form::MemReg: insn.ra = reg(); insn.rb = reg(); insn.value = static_cast<std::uint32_t>(rng()); break;
        case Form::Target: insn.value = static_cast<std::uint32_t>(rng()); break;
        case Form::OneReg: insn.ra = reg(); break;
      }
      const auto bytes = encode(insn);
      CHECK(bytes.size() == encoded_length(*m));
      CHECK(bytes[0] == op);
      const auto d = decode_bytes(bytes);
      REQUIRE(d.instruction);
      CHECK(*d.instruction == insn);
    }
  }
}

TEST_CASE("alu examples") {
  SUBCASE("adcl wraps with carry out") {
    const auto r = alu_exec(Mnemonic::Adcl, 1, 0xFFFFFFFF, Flags{});
    CHECK(r.value == 0);
    CHECK(r.flags.zf);
    CHECK(r.flags.cf);
  }
  SUBCASE("cmpl 511 511 lets jbe through") {
    const auto r = alu_exec(Mnemonic::Cmpl, 511, 511);
    CHECK(r.flags.zf);
    CHECK_FALSE(r.flags.cf);
    CHECK(jump_taken(Mnemonic::Jbe, r.flags));
  }
  SUBCASE("sall by 3 scales an index by 8") {
    const auto r = alu_exec(Mnemonic::Sall, 3, 1);
    CHECK(r.value == 8);
    CHECK_FALSE(r.flags.zf);
    CHECK_FALSE(r.flags.sf);
    CHECK_FALSE(r.flags.cf);
  }
  SUBCASE("addl signed and unsigned overflow") {
    const auto r = alu_exec(Mnemonic::Addl, 0x80000000, 0x80000000);
    CHECK(r.value == 0);
    CHECK(r.flags.zf);
    CHECK(r.flags.of);
    CHECK(r.flags.cf);
  }
  SUBCASE("logical ops clear cf and of") {
    const Flags dirty{true, true, true, true};
    for (auto m : {Mnemonic::Andl, Mnemonic::Orl, Mnemonic::Xorl}) {
      const auto r = alu_exec(m, 0xF0F0F0F0, 0x0FF00FF0, dirty);
      CHECK_FALSE(r.flags.cf);
      CHECK_FALSE(r.flags.of);
    }
    CHECK(alu_exec(Mnemonic::Andl, 0xF0F0F0F0, 0x0FF00FF0).value == 0x00F000F0);
    CHECK(alu_exec(Mnemonic::Orl, 0xF0F0F0F0, 0x0FF00FF0).value == 0xFFF0FFF0);
    CHECK(alu_exec(Mnemonic::Xorl, 0xF0F0F0F0, 0x0FF00FF0).value == 0xFF00FF00);
  }
  SUBCASE("shift edge cases") {
    const Flags in{true, false, true, true};
    const auto zero = alu_exec(Mnemonic::Shrl, 0, 0x1234, in);
    CHECK(zero.value == 0x1234);
    CHECK(zero.flags == in);
    const auto mod = alu_exec(Mnemonic::Sall, 33, 1);
    CHECK(mod.value == 2);
    const auto out = alu_exec(Mnemonic::Shrl, 1, 3);
    CHECK(out.value == 1);
    CHECK(out.flags.cf);
    CHECK_FALSE(out.flags.of);
    CHECK(alu_exec(Mnemonic::Sall, 1, 0x80000000).flags.cf);
  }
}

TEST_CASE("alu agrees with wide arithmetic") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 20000; ++k) {
    const auto a = static_cast<std::uint32_t>(rng());
    const auto b = static_cast<std::uint32_t>(rng());
    const bool cin = rng() & 1;
    auto same = [&](const AluResult& r, const oracle::WideResult& w) {
      return r.value == w.value && r.flags.zf == w.zf && r.flags.sf == w.sf && r.flags.of == w.of && r.flags.cf == w.cf;
    };
    REQUIRE(same(alu_exec(Mnemonic::Addl, a, b), oracle::add(a, b)));
    REQUIRE(same(alu_exec(Mnemonic::Adcl, a, b, Flags{false, false, false, cin}), oracle::add(a, b, cin)));
    REQUIRE(same(alu_exec(Mnemonic::Subl, a, b), oracle::sub(a, b)));
    const auto c = alu_exec(Mnemonic::Cmpl, a, b);
    const auto w = oracle::sub(a, b);
    REQUIRE((c.flags.zf == w.zf && c.flags.sf == w.sf && c.flags.of == w.of && c.flags.cf == w.cf));
  }
}

TEST_CASE("jump conditions") {
  auto flags_of = [](std::uint32_t a, std::uint32_t b) { return alu_exec(Mnemonic::Cmpl, a, b).flags; };
  std::mt19937_64 rng(3);
  for (int k = 0; k < 5000; ++k) {
    std::uint32_t a = static_cast<std::uint32_t>(rng()), b = static_cast<std::uint32_t>(rng());
    if (k % 4 == 0) b = a;
    const Flags f = flags_of(a, b);
    const auto sa = static_cast<std::int32_t>(a), sb = static_cast<std::int32_t>(b);
    REQUIRE(jump_taken(Mnemonic::Jmp, f));
    REQUIRE(jump_taken(Mnemonic::Je, f) == (b == a));
    REQUIRE(jump_taken(Mnemonic::Jne, f) == (b != a));
    REQUIRE(jump_taken(Mnemonic::Jl, f) == (sb < sa));
    REQUIRE(jump_taken(Mnemonic::Jle, f) == (sb <= sa));
    REQUIRE(jump_taken(Mnemonic::Jg, f) == (sb > sa));
    REQUIRE(jump_taken(Mnemonic::Jge, f) == (sb >= sa));
    REQUIRE(jump_taken(Mnemonic::Jb, f) == (b < a));
    REQUIRE(jump_taken(Mnemonic::Jbe, f) == (b <= a));
  }
}

TEST_CASE("initial state") {
  SUBCASE("empty layout") {
    const MachineState s = make_initial_state({});
    CHECK(s.eip == 0);
    for (auto v : s.gpr) CHECK(v == 0);
    CHECK(s.status == RunStatus::Running);
    CHECK_FALSE(s.guest_mode);
    CHECK(s.flags == Flags{});
  }
  SUBCASE("code placed at its base") {
    Layout l;
    l.regions.push_back({"code", 0x7C00, 3, {0x10, 0x10, 0x00}});
    const MachineState s = make_initial_state(l);
    CHECK(s.memory.read8(0x7C00) == 0x10);
    CHECK(s.memory.read8(0x7C02) == 0x00);
    CHECK(s.memory.read8(0x7BFF) == 0);
  }
  SUBCASE("overlap rejected") {
    Layout l;
    l.regions.push_back({"a", 0x8000, 0x1001, {}});
    l.regions.push_back({"b", 0x9000, 0x10, {}});
    CHECK_THROWS_AS(make_initial_state(l), ConfigError);
  }
  SUBCASE("region past 4GiB rejected") {
    Layout l;
    l.regions.push_back({"a", 0xFFFFFFF0, 0x20, {}});
    CHECK_THROWS_AS(make_initial_state(l), ConfigError);
  }
}

TEST_CASE("step semantics") {
  SUBCASE("irmovl 48 into imme1") {
    MachineState s = with_program("(:f (irmovl 48 :imme1))");
    s = step(s);
    CHECK(s.reg(Reg::IMME1) == 48);
    CHECK(s.eip == 0x106);
  }
  SUBCASE("halted state is a fixed point") {
    MachineState s = with_code(0, {0x00});
    s = step(s);
    CHECK(s.status == RunStatus::Halted);
    const MachineState again = step(s);
    CHECK(again == s);
    const RunResult r = run(s, 100);
    CHECK(r.steps == 0);
    CHECK(r.state == s);
  }
  SUBCASE("pushl stores little-endian below esp") {
    MachineState s = with_program("(:f (pushl :ebp))");
    s.reg(Reg::ESP) = 0x8000;
    s.reg(Reg::EBP) = 0x1234;
    s = step(s);
    CHECK(s.reg(Reg::ESP) == 0x7FFC);
    CHECK(s.memory.read8(0x7FFC) == 0x34);
    CHECK(s.memory.read8(0x7FFD) == 0x12);
    CHECK(s.memory.read8(0x7FFE) == 0x00);
    CHECK(s.memory.read8(0x7FFF) == 0x00);
  }
  SUBCASE("single halt") {
    const RunResult r = run(with_code(0x40, {0x00}), 10);
    CHECK(r.steps == 1);
    CHECK(r.state.status == RunStatus::Halted);
  }
  SUBCASE("cmpl does not write back") {
    MachineState s = with_program("(:f (cmpl :eax :ebx))");
    s.reg(Reg::EAX) = 5;
    s.reg(Reg::EBX) = 3;
    s = step(s);
    CHECK(s.reg(Reg::EBX) == 3);
    CHECK(s.flags.cf);
  }
  SUBCASE("call and ret") {
    MachineState s = with_program("(:f (call :g) (halt) :g (irmovl 7 :eax) (ret))");
    s.reg(Reg::ESP) = 0x1000;
    const RunResult r = run(s, 10);
    CHECK(r.state.status == RunStatus::Halted);
    CHECK(r.state.reg(Reg::EAX) == 7);
    CHECK(r.state.reg(Reg::ESP) == 0x1000);
    CHECK(r.state.memory.read32(0xFFC) == 0x105);
  }
  SUBCASE("rmmovl and mrmovl with negative displacement") {
    MachineState s = with_program("(:f (rmmovl :eax -8 (:ebp)) (mrmovl -8 (:ebp) :ecx))");
    s.reg(Reg::EAX) = 0xCAFEBABE;
    s.reg(Reg::EBP) = 0x2000;
    s = run(s, 2).state;
    CHECK(s.memory.read32(0x1FF8) == 0xCAFEBABE);
    CHECK(s.reg(Reg::ECX) == 0xCAFEBABE);
  }
  SUBCASE("popl into esp keeps the loaded value") {
    MachineState s = with_program("(:f (popl :esp))");
    s.reg(Reg::ESP) = 0x1000;
    s.memory.write32(0x1000, 0xABCD);
    s = step(s);
    CHECK(s.reg(Reg::ESP) == 0xABCD);
  }
  SUBCASE("run stops at the bound") {
    MachineState s = with_program("(:f :top (jmp :top))");
    const RunResult r = run(s, 25);
    CHECK(r.steps == 25);
    CHECK(r.state.running());
  }
}

TEST_CASE("stack discipline") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 500; ++k) {
    MachineState s = with_program("(:f (pushl :eax) (popl :ebx))");
    const auto v = static_cast<std::uint32_t>(rng());
    const std::uint32_t esp = 0x10000 + 4 * static_cast<std::uint32_t>(rng() % 1000);
    s.reg(Reg::EAX) = v;
    s.reg(Reg::ESP) = esp;
    s = run(s, 2).state;
    REQUIRE(s.reg(Reg::ESP) == esp);
    REQUIRE(s.reg(Reg::EBX) == v);
  }
}

TEST_CASE("addl then adcl adds 64-bit values") {
  const char* program =
      "(:add64 (mrmovl 0 (:esi) :eax) (mrmovl 4 (:esi) :edx)"
      " (mrmovl 8 (:esi) :ecx) (mrmovl 12 (:esi) :ebx)"
      " (addl :ecx :eax) (adcl :ebx :edx) (halt))";
  const MachineState base = with_program(program);
  std::mt19937_64 rng(99);
  for (int k = 0; k < 5000; ++k) {
    const std::uint64_t x = rng(), y = rng();
    MachineState s = base;
    s.reg(Reg::ESI) = 0x4000;
    s.memory.write64(0x4000, x);
    s.memory.write64(0x4008, y);
    s = run(s, 10).state;
    const std::uint64_t got = (std::uint64_t{s.reg(Reg::EDX)} << 32) | s.reg(Reg::EAX);
    REQUIRE(got == x + y);
  }
}

TEST_CASE("determinism and width closure") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 300; ++k) {
    MachineState s;
    s.eip = 0x1000;
    for (std::uint32_t i = 0; i < 64; ++i) s.memory.write8(0x1000 + i, static_cast<std::uint8_t>(rng()));
    for (auto& r : s.gpr) r = static_cast<std::uint32_t>(rng() % 0x20000);
    MachineState a = s, b = s;
    for (int i = 0; i < 20; ++i) {
      a = step(a);
      b = step(b);
      REQUIRE(a == b);
    }
  }
}

TEST_CASE("trace lines") {
  MachineState s = with_program("(:f (irmovl 5 :eax) (pushl :eax) (halt))");
  s.reg(Reg::ESP) = 0x100000;
  std::ostringstream out;
  run_traced(s, 10, out);
  const std::string text = out.str();
  CHECK(text.find("irmovl") != std::string::npos);
  CHECK(text.find("eax=0x00000000->0x00000005") != std::string::npos);
  CHECK(text.find("000ffffc=05") != std::string::npos);
}
