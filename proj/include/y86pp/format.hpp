#pragma once

#include <cstdint>
#include <string>

namespace y86pp {

// "0x0000abcd"
std::string hex32(std::uint32_t v);
// "0x00000000002000e7"
std::string hex64(std::uint64_t v);
// "e7"
std::string hex8(std::uint8_t v);

// Parses decimal or 0x-prefixed hexadecimal, optionally signed, and reduces
// mod 2^32. Returns false on malformed text or magnitude >= 2^32.
bool parse_u32(const std::string& text, std::uint32_t& out);

}  // namespace y86pp
