#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "y86pp/isa.hpp"
#include "y86pp/machine.hpp"

namespace y86pp {

struct SourcePos {
  std::size_t line = 1;
  std::size_t column = 1;
};

struct AsmLabel {
  std::string name;
  SourcePos pos;
};

// An instruction in source form. Jump and call targets may name a label
// instead of carrying an absolute address.
struct AsmInstruction {
  Instruction insn;
  std::optional<std::string> target_label;
  SourcePos pos;
};

using AsmItem = std::variant<AsmLabel, AsmInstruction>;

// Grammar (parenthesized, Lisp-like; `;` starts a comment to end of line):
//
//   unit     := program+
//   program  := '(' ':'name item* ')'
//   item     := ':'label | '(' mnemonic operand* ')'
//   operand  := ':'reg | integer | integer '(' ':'reg ')' | ':'label
//
// Integers are decimal with an optional sign; 0x-prefixed hexadecimal is
// accepted as an extension. Values are reduced mod 2^32. Throws ParseError.
std::vector<AsmItem> parse_program(std::string_view text);

struct ProgramImage {
  std::uint32_t base = 0;
  std::vector<std::uint8_t> bytes;
  std::map<std::string, std::uint32_t> symbols;

  AddressRange range() const { return {base, bytes.size()}; }
  std::uint32_t symbol(const std::string& name) const;  // throws AssemblyError
  friend bool operator==(const ProgramImage&, const ProgramImage&) = default;
};

// Two passes: lay out addresses from `base`, then encode with resolved
// absolute targets. Throws AssemblyError for duplicate/undefined labels or an
// image that does not fit below 2^32.
ProgramImage assemble(const std::vector<AsmItem>& items, std::uint32_t base);

inline ProgramImage assemble_text(std::string_view text, std::uint32_t base) {
  return assemble(parse_program(text), base);
}

// Inverse of assemble for a cleanly decodable image. Image symbols are kept;
// unlabeled in-image jump targets get generated labels. Throws DecodeError.
std::string disassemble(const ProgramImage& image);

// Text image file:
//   Y86PP1 <base as 8 lowercase hex digits> <length in decimal>
//   <16 space-separated lowercase hex byte pairs per line>
//   SYM <name> <address as 8 lowercase hex digits>     (by address, then name)
void write_image(std::ostream& out, const ProgramImage& image);
std::string image_to_string(const ProgramImage& image);
ProgramImage read_image(std::istream& in);  // throws ConfigError

// Regions already occupied by loaded images.
class LoadRegistry {
 public:
  void claim(const AddressRange& range);  // throws ConfigError on overlap
  const std::vector<AddressRange>& claimed() const { return claimed_; }

 private:
  std::vector<AddressRange> claimed_;
};

// Copies the image bytes into memory at its base.
MachineState load_image(MachineState state, const ProgramImage& image, LoadRegistry& registry);

}  // namespace y86pp
