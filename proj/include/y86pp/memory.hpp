#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace y86pp {

// Half-open byte range [begin, begin + size). The end is kept 64-bit so a
// range may reach the top of the 32-bit space.
struct AddressRange {
  std::uint32_t begin = 0;
  std::uint64_t size = 0;

  std::uint64_t end() const { return std::uint64_t{begin} + size; }
  bool contains(std::uint32_t addr) const { return addr >= begin && addr < end(); }
  bool overlaps(const AddressRange& other) const {
    return size != 0 && other.size != 0 && begin < other.end() && other.begin < end();
  }
  friend bool operator==(const AddressRange&, const AddressRange&) = default;
};

// Sparse byte-addressable 32-bit memory. Storage is split into 4KiB pages
// shared copy-on-write between copies, so snapshots of a machine state are
// cheap. Absent bytes read as zero and equality is extensional: a stored zero
// equals an absent byte.
class Memory {
 public:
  static constexpr std::uint32_t kPageBits = 12;
  static constexpr std::uint32_t kPageSize = 1u << kPageBits;
  using Page = std::array<std::uint8_t, kPageSize>;

  std::uint8_t read8(std::uint32_t addr) const;
  void write8(std::uint32_t addr, std::uint8_t value);

  // Little-endian multi-byte accessors; addresses wrap mod 2^32.
  std::uint32_t read32(std::uint32_t addr) const;
  std::uint64_t read64(std::uint32_t addr) const;
  void write32(std::uint32_t addr, std::uint32_t value);
  void write64(std::uint32_t addr, std::uint64_t value);

  void read_block(std::uint32_t addr, std::span<std::uint8_t> out) const;
  void write_block(std::uint32_t addr, std::span<const std::uint8_t> bytes);

  // Lowest address at which the two memories differ, ignoring `excluded`.
  std::optional<std::uint32_t> first_difference(const Memory& other,
                                                std::span<const AddressRange> excluded = {}) const;

  // Lowest differing address inside `range`.
  std::optional<std::uint32_t> first_difference_in(const Memory& other, const AddressRange& range) const;

  // Addresses of every stored non-zero byte, ascending.
  std::vector<std::uint32_t> nonzero_addresses() const;

  // Page numbers with backing storage, ascending.
  std::vector<std::uint32_t> resident_pages() const;

  friend bool operator==(const Memory& a, const Memory& b) { return !a.first_difference(b).has_value(); }

 private:
  const Page* find_page(std::uint32_t page_no) const;
  Page& writable_page(std::uint32_t page_no);

  std::map<std::uint32_t, std::shared_ptr<Page>> pages_;
};

}  // namespace y86pp
