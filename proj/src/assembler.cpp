#include "y86pp/assembler.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <set>
#include <sstream>

#include "y86pp/error.hpp"
#include "y86pp/format.hpp"

namespace y86pp {

namespace {

enum class TokenKind { LParen, RParen, Keyword, Word, End };

struct Token {
  TokenKind kind = TokenKind::End;
  std::string text;  // keyword text excludes the leading ':'
  SourcePos pos;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Token next() {
    skip_blank();
    Token tok;
    tok.pos = pos_;
    if (at_ >= text_.size()) return tok;
    const char c = text_[at_];
    if (c == '(' || c == ')') {
      advance();
      tok.kind = c == '(' ? TokenKind::LParen : TokenKind::RParen;
      return tok;
    }
    std::string word;
    while (at_ < text_.size() && !is_delimiter(text_[at_])) {
      word += text_[at_];
      advance();
    }
    if (word.front() == ':') {
      if (word.size() == 1) throw ParseError(tok.pos.line, tok.pos.column, "malformed token ':'");
      tok.kind = TokenKind::Keyword;
      tok.text = word.substr(1);
    } else {
      tok.kind = TokenKind::Word;
      tok.text = word;
    }
    return tok;
  }

 private:
  static bool is_delimiter(char c) {
    return c == '(' || c == ')' || c == ';' || std::isspace(static_cast<unsigned char>(c));
  }

  void advance() {
    if (text_[at_] == '\n') {
      ++pos_.line;
      pos_.column = 1;
    } else {
      ++pos_.column;
    }
    ++at_;
  }

  void skip_blank() {
    while (at_ < text_.size()) {
      const char c = text_[at_];
      if (c == ';') {
        while (at_ < text_.size() && text_[at_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  std::string_view text_;
  std::size_t at_ = 0;
  SourcePos pos_;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string_view kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::LParen: return "'('";
    case TokenKind::RParen: return "')'";
    case TokenKind::Keyword: return "keyword";
    case TokenKind::Word: return "word";
    case TokenKind::End: return "end of input";
  }
  return "token";
}

std::size_t operand_count(Form form) {
  switch (form) {
    case Form::NoOperands: return 0;
    case Form::Target:
    case Form::OneReg: return 1;
    default: return 2;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view text) : lexer_(text) { advance(); }

  std::vector<AsmItem> parse_unit() {
    std::vector<AsmItem> items;
    if (cur_.kind == TokenKind::End) fail(cur_, "empty program");
    while (cur_.kind != TokenKind::End) parse_function(items);
    return items;
  }

 private:
  void advance() { cur_ = lexer_.next(); }

  [[noreturn]] static void fail(const Token& at, const std::string& what) {
    throw ParseError(at.pos.line, at.pos.column, what);
  }

  void expect(TokenKind kind, const std::string& context) {
    if (cur_.kind != kind) {
      fail(cur_, "expected " + std::string(kind_name(kind)) + " " + context + ", found " + describe(cur_));
    }
    advance();
  }

  static std::string describe(const Token& t) {
    if (t.kind == TokenKind::Keyword) return "':" + t.text + "'";
    if (t.kind == TokenKind::Word) return "'" + t.text + "'";
    return std::string(kind_name(t.kind));
  }

  void add_label(std::vector<AsmItem>& items, const Token& tok) {
    if (!labels_.insert(tok.text).second) fail(tok, "duplicate label ':" + tok.text + "'");
    items.push_back(AsmLabel{tok.text, tok.pos});
  }

  void parse_function(std::vector<AsmItem>& items) {
    expect(TokenKind::LParen, "to open a program");
    if (cur_.kind != TokenKind::Keyword) fail(cur_, "program must begin with a :name label, found " + describe(cur_));
    add_label(items, cur_);
    advance();
    while (cur_.kind != TokenKind::RParen) {
      if (cur_.kind == TokenKind::Keyword) {
        add_label(items, cur_);
        advance();
      } else if (cur_.kind == TokenKind::LParen) {
        items.push_back(parse_instruction());
      } else if (cur_.kind == TokenKind::End) {
        fail(cur_, "unterminated program (missing ')')");
      } else {
        fail(cur_, "expected a label or an instruction, found " + describe(cur_));
      }
    }
    advance();
  }

  Reg parse_register(const std::string& mnemonic) {
    if (cur_.kind != TokenKind::Keyword) {
      fail(cur_, "operand kind: " + mnemonic + " expects a register here, found " + describe(cur_));
    }
    const auto reg = register_from_name(lower(cur_.text));
    if (!reg) fail(cur_, "unknown register ':" + cur_.text + "'");
    advance();
    return *reg;
  }

  std::uint32_t parse_integer(const std::string& mnemonic) {
    if (cur_.kind != TokenKind::Word) {
      fail(cur_, "operand kind: " + mnemonic + " expects an integer here, found " + describe(cur_));
    }
    std::uint32_t value = 0;
    if (!parse_u32(cur_.text, value)) fail(cur_, "malformed integer '" + cur_.text + "'");
    advance();
    return value;
  }

  Reg parse_memory_base(const std::string& mnemonic) {
    expect(TokenKind::LParen, "before memory base register");
    const Reg base = parse_register(mnemonic);
    expect(TokenKind::RParen, "after memory base register");
    return base;
  }

  void check_operand_present(const std::string& mnemonic, Form form) {
    if (cur_.kind == TokenKind::RParen || cur_.kind == TokenKind::End) {
      fail(cur_, "arity mismatch: " + mnemonic + " takes " + std::to_string(operand_count(form)) + " operand(s)");
    }
  }

  AsmInstruction parse_instruction() {
    const Token open = cur_;
    advance();
    if (cur_.kind != TokenKind::Word) fail(cur_, "expected a mnemonic, found " + describe(cur_));
    const std::string name = lower(cur_.text);
    const auto mnemonic = mnemonic_from_name(name);
    if (!mnemonic) fail(cur_, "unknown mnemonic '" + cur_.text + "'");
    advance();

    AsmInstruction out;
    out.pos = open.pos;
    out.insn.mnemonic = *mnemonic;
    const Form form = form_of(*mnemonic);
    switch (form) {
      case Form::NoOperands: break;
      case Form::RegReg:
        check_operand_present(name, form);
        out.insn.ra = parse_register(name);
        check_operand_present(name, form);
        out.insn.rb = parse_register(name);
        break;
      case Form::OneReg:
        check_operand_present(name, form);
        out.insn.ra = parse_register(name);
        break;
      case Form::ImmReg:
        check_operand_present(name, form);
        out.insn.value = parse_integer(name);
        check_operand_present(name, form);
        out.insn.rb = parse_register(name);
        break;
      case Form::RegMem:
        check_operand_present(name, form);
        out.insn.ra = parse_register(name);
        check_operand_present(name, form);
        out.insn.value = parse_integer(name);
        out.insn.rb = parse_memory_base(name);
        break;
      case Form::MemReg:
        check_operand_present(name, form);
        out.insn.value = parse_integer(name);
        out.insn.rb = parse_memory_base(name);
        check_operand_present(name, form);
        out.insn.ra = parse_register(name);
        break;
      case Form::Target:
        check_operand_present(name, form);
        if (cur_.kind == TokenKind::Keyword) {
          out.target_label = cur_.text;
          advance();
        } else {
          out.insn.value = parse_integer(name);
        }
        break;
    }
    if (cur_.kind != TokenKind::RParen) {
      if (cur_.kind == TokenKind::End) fail(cur_, "unterminated instruction (missing ')')");
      fail(cur_, "arity mismatch: " + name + " takes " + std::to_string(operand_count(form)) + " operand(s)");
    }
    advance();
    return out;
  }

  Lexer lexer_;
  Token cur_;
  std::set<std::string> labels_;
};

}  // namespace

std::vector<AsmItem> parse_program(std::string_view text) { return Parser(text).parse_unit(); }

std::uint32_t ProgramImage::symbol(const std::string& name) const {
  const auto it = symbols.find(name);
  if (it == symbols.end()) throw AssemblyError("undefined symbol '" + name + "'");
  return it->second;
}

ProgramImage assemble(const std::vector<AsmItem>& items, std::uint32_t base) {
  ProgramImage image;
  image.base = base;

  // Pass 1: addresses.
  std::uint64_t address = base;
  for (const auto& item : items) {
    if (const auto* label = std::get_if<AsmLabel>(&item)) {
      if (!image.symbols.emplace(label->name, static_cast<std::uint32_t>(address)).second) {
        throw AssemblyError("duplicate label '" + label->name + "'");
      }
    } else {
      address += encoded_length(std::get<AsmInstruction>(item).insn);
    }
  }
  if (address > (std::uint64_t{1} << 32)) throw AssemblyError("image does not fit below 2^32");

  // Pass 2: encoding.
  image.bytes.reserve(static_cast<std::size_t>(address - base));
  for (const auto& item : items) {
    const auto* ai = std::get_if<AsmInstruction>(&item);
    if (!ai) continue;
    Instruction insn = ai->insn;
    if (ai->target_label) {
      const auto it = image.symbols.find(*ai->target_label);
      if (it == image.symbols.end()) {
        throw AssemblyError("line " + std::to_string(ai->pos.line) + ": undefined label ':" + *ai->target_label + "'");
      }
      insn.value = it->second;
    }
    encode(insn, image.bytes);
  }
  return image;
}

std::string disassemble(const ProgramImage& image) {
  std::vector<Instruction> insns;
  std::vector<std::uint32_t> offsets;
  std::size_t offset = 0;
  while (offset < image.bytes.size()) {
    const auto decoded = decode_bytes(std::span<const std::uint8_t>(image.bytes).subspan(offset));
    if (!decoded.instruction) throw DecodeError(offset, std::string(describe(decoded.failure)));
    insns.push_back(*decoded.instruction);
    offsets.push_back(static_cast<std::uint32_t>(offset));
    offset += encoded_length(*decoded.instruction);
  }

  const std::uint64_t end = image.range().end();
  std::multimap<std::uint32_t, std::string> labels;
  std::map<std::uint32_t, std::string> primary;  // address -> name used in operands
  for (const auto& [name, addr] : image.symbols) labels.emplace(addr, name);
  for (const auto& [addr, name] : labels) primary.emplace(addr, name);

  std::set<std::uint32_t> instruction_starts;
  for (auto off : offsets) instruction_starts.insert(image.base + off);
  instruction_starts.insert(static_cast<std::uint32_t>(end));

  std::size_t generated = 0;
  for (const auto& insn : insns) {
    if (form_of(insn.mnemonic) != Form::Target) continue;
    const std::uint32_t target = insn.value;
    if (target < image.base || target > end || primary.count(target) || !instruction_starts.count(target)) continue;
    std::string name;
    do {
      name = "D" + std::to_string(generated++);
    } while (image.symbols.count(name));
    primary.emplace(target, name);
    labels.emplace(target, name);
  }

  // The outer list needs a leading name; use the symbol at the base if any.
  std::ostringstream out;
  std::string head = "image";
  auto base_labels = labels.equal_range(image.base);
  std::set<std::string> emitted;
  if (base_labels.first != base_labels.second) {
    head = base_labels.first->second;
  } else {
    while (image.symbols.count(head)) head += "_";
  }
  emitted.insert(head);
  out << "(:" << head << '\n';

  auto emit_labels_at = [&](std::uint32_t addr) {
    auto [lo, hi] = labels.equal_range(addr);
    for (auto it = lo; it != hi; ++it) {
      if (emitted.insert(it->second).second) out << ":" << it->second << '\n';
    }
  };

  for (std::size_t i = 0; i < insns.size(); ++i) {
    const std::uint32_t addr = image.base + offsets[i];
    emit_labels_at(addr);
    std::string_view target;
    if (form_of(insns[i].mnemonic) == Form::Target) {
      const auto it = primary.find(insns[i].value);
      if (it != primary.end()) target = it->second;
    }
    out << "  " << format_instruction(insns[i], target) << '\n';
  }
  if (end <= 0xFFFFFFFFull) emit_labels_at(static_cast<std::uint32_t>(end));
  out << ")\n";
  return out.str();
}

void write_image(std::ostream& out, const ProgramImage& image) {
  out << "Y86PP1 " << hex32(image.base).substr(2) << ' ' << image.bytes.size() << '\n';
  for (std::size_t i = 0; i < image.bytes.size(); ++i) {
    out << hex8(image.bytes[i]);
    out << ((i % 16 == 15 || i + 1 == image.bytes.size()) ? '\n' : ' ');
  }
  std::vector<std::pair<std::uint32_t, std::string>> ordered;
  for (const auto& [name, addr] : image.symbols) ordered.emplace_back(addr, name);
  std::sort(ordered.begin(), ordered.end());
  for (const auto& [addr, name] : ordered) out << "SYM " << name << ' ' << hex32(addr).substr(2) << '\n';
}

std::string image_to_string(const ProgramImage& image) {
  std::ostringstream out;
  write_image(out, image);
  return out.str();
}

ProgramImage read_image(std::istream& in) {
  auto hex_value = [](const std::string& text, std::uint32_t& out) {
    if (text.empty() || text.size() > 8) return false;
    return parse_u32("0x" + text, out);
  };

  std::string magic, base_text;
  std::uint64_t length = 0;
  if (!(in >> magic >> base_text >> length) || magic != "Y86PP1") throw ConfigError("image: bad header");
  ProgramImage image;
  if (!hex_value(base_text, image.base)) throw ConfigError("image: bad base address '" + base_text + "'");
  if (image.base + length > (std::uint64_t{1} << 32)) throw ConfigError("image: does not fit below 2^32");

  image.bytes.reserve(static_cast<std::size_t>(length));
  std::string word;
  while (image.bytes.size() < length) {
    if (!(in >> word)) throw ConfigError("image: truncated byte section");
    std::uint32_t byte = 0;
    if (word.size() != 2 || !hex_value(word, byte)) throw ConfigError("image: bad byte '" + word + "'");
    image.bytes.push_back(static_cast<std::uint8_t>(byte));
  }
  while (in >> word) {
    if (word != "SYM") throw ConfigError("image: expected SYM, found '" + word + "'");
    std::string name, addr_text;
    std::uint32_t addr = 0;
    if (!(in >> name >> addr_text) || !hex_value(addr_text, addr)) throw ConfigError("image: bad SYM record");
    if (addr < image.base || addr > image.range().end()) {
      throw ConfigError("image: symbol '" + name + "' lies outside the image");
    }
    if (!image.symbols.emplace(name, addr).second) throw ConfigError("image: duplicate symbol '" + name + "'");
  }
  return image;
}

void LoadRegistry::claim(const AddressRange& range) {
  for (const auto& other : claimed_) {
    if (range.overlaps(other)) {
      throw ConfigError("load: image at " + hex32(range.begin) + " overlaps an image loaded at " + hex32(other.begin));
    }
  }
  claimed_.push_back(range);
}

MachineState load_image(MachineState state, const ProgramImage& image, LoadRegistry& registry) {
  registry.claim(image.range());
  state.memory.write_block(image.base, image.bytes);
  return state;
}

}  // namespace y86pp
