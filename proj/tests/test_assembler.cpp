#include <doctest.h>

#include <random>
#include <sstream>

#include "y86pp/assembler.hpp"
#include "y86pp/error.hpp"
#include "y86pp/minvisor.hpp"

using namespace y86pp;

namespace {

const AsmInstruction& insn_at(const std::vector<AsmItem>& items, std::size_t i) {
  return std::get<AsmInstruction>(items.at(i));
}

std::size_t error_line(const std::string& text) {
  try {
    assemble_text(text, 0);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("parse examples") {
  SUBCASE("label then ret") {
    const auto items = parse_program("(:f (ret))");
    REQUIRE(items.size() == 2);
    CHECK(std::get<AsmLabel>(items[0]).name == "f");
    CHECK(insn_at(items, 1).insn.mnemonic == Mnemonic::Ret);
  }
  SUBCASE("memory operand with negative displacement") {
    const auto items = parse_program("(:f (mrmovl -28 (:ebp) :valu1))");
    const Instruction& i = insn_at(items, 1).insn;
    CHECK(i.mnemonic == Mnemonic::Mrmovl);
    CHECK(i.value == static_cast<std::uint32_t>(-28));
    CHECK(i.rb == Reg::EBP);
    CHECK(i.ra == Reg::VALU1);
  }
  SUBCASE("only irmovl takes an immediate") {
    CHECK_THROWS_AS(parse_program("(:f (addl 5 :eax))"), ParseError);
  }
  SUBCASE("positions are recorded") {
    const auto items = parse_program("(:f\n  (nop)\n  :L1 (halt))");
    CHECK(insn_at(items, 1).pos.line == 2);
    CHECK(insn_at(items, 1).pos.column == 3);
    CHECK(std::get<AsmLabel>(items[2]).pos.line == 3);
  }
  SUBCASE("comments, case and large immediates") {
    const auto items = parse_program("; header\n(:f (IRMOVL 4294967295 :EAX) ; tail\n (irmovl -1 :ebx))");
    CHECK(insn_at(items, 1).insn.value == 0xFFFFFFFFu);
    CHECK(insn_at(items, 2).insn.value == 0xFFFFFFFFu);
    CHECK(insn_at(items, 1).insn.rb == Reg::EAX);
  }
}

TEST_CASE("assemble examples") {
  SUBCASE("single ret") {
    const ProgramImage img = assemble_text("(:f (ret))", 0x100);
    CHECK(img.bytes == std::vector<std::uint8_t>{0x90});
    CHECK(img.symbols.at("f") == 0x100);
  }
  SUBCASE("forward jump encodes the absolute target") {
    // jmp is 5 bytes, then five nops
    const ProgramImage img = assemble_text("(:f (jmp :L) (nop) (nop) (nop) (nop) (nop) :L (halt))", 0x2000);
    CHECK(img.symbols.at("L") == 0x2000 + 10);
    CHECK(img.bytes[0] == 0x70);
    CHECK(img.bytes[1] == 0x0A);
    CHECK(img.bytes[2] == 0x20);
    CHECK(img.bytes[3] == 0x00);
    CHECK(img.bytes[4] == 0x00);
  }
  SUBCASE("missing label") {
    CHECK_THROWS_AS(assemble_text("(:f (jmp :nowhere))", 0), AssemblyError);
  }
  SUBCASE("does not fit below 4GiB") {
    CHECK_THROWS_AS(assemble_text("(:f (irmovl 1 :eax))", 0xFFFFFFFC), AssemblyError);
    CHECK_NOTHROW(assemble_text("(:f (irmovl 1 :eax))", 0xFFFFFFFA));
  }
  SUBCASE("several programs in one unit resolve across each other") {
    const ProgramImage img = assemble_text("(:a (call :b) (ret)) (:b (ret))", 0);
    CHECK(img.symbols.at("b") == 6);
    CHECK(img.bytes[1] == 6);
  }
}

TEST_CASE("length law and address monotonicity") {
  std::string unit;
  for (auto fn : minvisor::kAllFunctions) unit += std::string(minvisor::program_source(fn)) + "\n";
  {
    const auto items = parse_program(unit);
    std::size_t total = 0;
    for (const auto& item : items) {
      if (const auto* ai = std::get_if<AsmInstruction>(&item)) total += encoded_length(ai->insn);
    }
    const ProgramImage img = assemble(items, 0x7C00);
    CHECK(img.bytes.size() == total);
    std::uint32_t last = 0;
    bool first = true;
    std::uint32_t addr = 0x7C00;
    for (const auto& item : items) {
      if (const auto* label = std::get_if<AsmLabel>(&item)) {
        CHECK(img.symbols.at(label->name) == addr);
        if (!first) CHECK(addr >= last);
        last = addr;
        first = false;
      } else {
        addr += static_cast<std::uint32_t>(encoded_length(std::get<AsmInstruction>(item).insn));
      }
    }
  }
}

TEST_CASE("disassemble examples") {
  CHECK(disassemble(ProgramImage{0, {0x90}, {}}).find("(ret)") != std::string::npos);
  try {
    disassemble(ProgramImage{0, {0xC0}, {}});
    FAIL("expected a decode error");
  } catch (const DecodeError& e) {
    CHECK(e.offset() == 0);
  }
  try {
    disassemble(ProgramImage{0, {0x10, 0x10, 0xC0}, {}});
    FAIL("expected a decode error");
  } catch (const DecodeError& e) {
    CHECK(e.offset() == 2);
  }
}

TEST_CASE("shipped sources round trip byte-identically") {
  for (auto fn : {minvisor::Function::InitPdpt, minvisor::Function::InitPdts, minvisor::Function::SecNotPresent}) {
    CAPTURE(minvisor::function_name(fn));
    const ProgramImage img = assemble_text(minvisor::program_source(fn), 0x7C00);
    const std::string text = disassemble(img);
    const ProgramImage again = assemble_text(text, 0x7C00);
    CHECK(again.bytes == img.bytes);
    CHECK(again.symbols == img.symbols);
  }
  const ProgramImage all = minvisor::assemble_programs(0x7C00);
  CHECK(assemble_text(disassemble(all), 0x7C00) == all);
}

TEST_CASE("random programs round trip") {
  std::mt19937_64 rng(123);
  const char* regs[] = {":eax", ":ecx", ":edx", ":ebx", ":esp", ":ebp", ":esi", ":edi", ":imme1", ":valu1"};
  for (int round = 0; round < 200; ++round) {
    std::ostringstream src;
    const int n = 1 + static_cast<int>(rng() % 30);
    src << "(:p";
    for (int i = 0; i < n; ++i) {
      if (rng() % 4 == 0) src << " :L" << i;
      const auto r = [&] { return regs[rng() % 10]; };
      switch (rng() % 8) {
        case 0: src << " (nop)"; break;
        case 1: src << " (irmovl " << static_cast<std::int32_t>(rng()) << " " << r() << ")"; break;
        case 2: src << " (addl " << r() << " " << r() << ")"; break;
        case 3: src << " (rmmovl " << r() << " " << static_cast<std::int32_t>(rng() % 200) - 100 << " (" << r() << "))"; break;
        case 4: src << " (mrmovl " << static_cast<std::int32_t>(rng() % 200) - 100 << " (" << r() << ") " << r() << ")"; break;
        case 5: src << " (jne :p)"; break;
        case 6: src << " (pushl " << r() << ")"; break;
        default: src << " (ret)"; break;
      }
    }
    src << ")";
    const ProgramImage img = assemble_text(src.str(), 0x1000);
    const ProgramImage again = assemble_text(disassemble(img), 0x1000);
    REQUIRE(again.bytes == img.bytes);
  }
}

TEST_CASE("malformed inputs report their line") {
  const std::pair<const char*, std::size_t> cases[] = {
      {"(:f\n (bogus :eax))", 2},
      {"(:f\n (nop)\n (addl :eax))", 3},
      {"(:f\n\n\n (addl 5 :eax))", 4},
      {"(:f\n (irmovl 12x :eax))", 2},
      {"(:f\n :L1\n (nop)\n :L1)", 4},
      {"(:f\n (nop)", 2},
      {"(:f (nop)\n (irmovl 1 :eax", 2},
      {"\n\n", 3},
      {"(:f\n (rrmovl :eax :xyz))", 2},
      {"(:f\n (mrmovl (:ebp) :eax))", 2},
      {"(:f\n (jmp :))", 2},
      {"(:f)\n(nop)", 2},
  };
  for (const auto& [text, line] : cases) {
    CAPTURE(text);
    CHECK(error_line(text) == line);
  }
}

TEST_CASE("image file") {
  const ProgramImage img = assemble_text("(:f (irmovl 231 :imme1) :g (ret))", 0x7C00);
  const std::string text = image_to_string(img);
  CHECK(text ==
        "Y86PP1 00007c00 7\n"
        "30 f8 e7 00 00 00 90\n"
        "SYM f 00007c00\n"
        "SYM g 00007c06\n");
  std::istringstream in(text);
  CHECK(read_image(in) == img);

  std::istringstream bad_header("Y86PP2 00007c00 1\n90\n");
  CHECK_THROWS_AS(read_image(bad_header), ConfigError);
  std::istringstream truncated("Y86PP1 00007c00 3\n90\n");
  CHECK_THROWS_AS(read_image(truncated), ConfigError);
  std::istringstream outside("Y86PP1 00007c00 1\n90\nSYM f 00009000\n");
  CHECK_THROWS_AS(read_image(outside), ConfigError);
}

TEST_CASE("loading images") {
  LoadRegistry reg;
  MachineState s;
  s = load_image(s, ProgramImage{0x7C00, {0x90}, {}}, reg);
  CHECK(s.memory.read8(0x7C00) == 0x90);
  s = load_image(s, ProgramImage{0x8000, {0x10, 0x00}, {}}, reg);
  CHECK(s.memory.read8(0x7C00) == 0x90);
  CHECK(s.memory.read8(0x8000) == 0x10);
  CHECK_THROWS_AS(load_image(s, ProgramImage{0x8001, {0x00}, {}}, reg), ConfigError);
}
