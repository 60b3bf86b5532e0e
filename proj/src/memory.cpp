#include "y86pp/memory.hpp"

#include <algorithm>
#include <cstring>
#include <set>

namespace y86pp {

namespace {

const Memory::Page& zero_page() {
  static const Memory::Page page{};
  return page;
}

}  // namespace

const Memory::Page* Memory::find_page(std::uint32_t page_no) const {
  auto it = pages_.find(page_no);
  return it == pages_.end() ? nullptr : it->second.get();
}

Memory::Page& Memory::writable_page(std::uint32_t page_no) {
  auto& slot = pages_[page_no];
  if (!slot) {
    slot = std::make_shared<Page>();
  } else if (slot.use_count() > 1) {
    slot = std::make_shared<Page>(*slot);
  }
  return *slot;
}

std::uint8_t Memory::read8(std::uint32_t addr) const {
  const Page* page = find_page(addr >> kPageBits);
  return page ? (*page)[addr & (kPageSize - 1)] : 0;
}

void Memory::write8(std::uint32_t addr, std::uint8_t value) {
  writable_page(addr >> kPageBits)[addr & (kPageSize - 1)] = value;
}

std::uint32_t Memory::read32(std::uint32_t addr) const {
  std::uint32_t value = 0;
  for (std::uint32_t i = 0; i < 4; ++i) value |= std::uint32_t{read8(addr + i)} << (8 * i);
  return value;
}

std::uint64_t Memory::read64(std::uint32_t addr) const {
  return std::uint64_t{read32(addr)} | (std::uint64_t{read32(addr + 4)} << 32);
}

void Memory::write32(std::uint32_t addr, std::uint32_t value) {
  for (std::uint32_t i = 0; i < 4; ++i) write8(addr + i, static_cast<std::uint8_t>(value >> (8 * i)));
}

void Memory::write64(std::uint32_t addr, std::uint64_t value) {
  write32(addr, static_cast<std::uint32_t>(value));
  write32(addr + 4, static_cast<std::uint32_t>(value >> 32));
}

void Memory::read_block(std::uint32_t addr, std::span<std::uint8_t> out) const {
  std::size_t done = 0;
  while (done < out.size()) {
    const std::uint32_t cur = addr + static_cast<std::uint32_t>(done);
    const std::uint32_t offset = cur & (kPageSize - 1);
    const std::size_t chunk = std::min<std::size_t>(kPageSize - offset, out.size() - done);
    const Page* page = find_page(cur >> kPageBits);
    if (page) {
      std::memcpy(out.data() + done, page->data() + offset, chunk);
    } else {
      std::memset(out.data() + done, 0, chunk);
    }
    done += chunk;
  }
}

void Memory::write_block(std::uint32_t addr, std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::uint32_t cur = addr + static_cast<std::uint32_t>(done);
    const std::uint32_t offset = cur & (kPageSize - 1);
    const std::size_t chunk = std::min<std::size_t>(kPageSize - offset, bytes.size() - done);
    std::memcpy(writable_page(cur >> kPageBits).data() + offset, bytes.data() + done, chunk);
    done += chunk;
  }
}

std::optional<std::uint32_t> Memory::first_difference(const Memory& other,
                                                      std::span<const AddressRange> excluded) const {
  std::set<std::uint32_t> page_numbers;
  for (const auto& [no, _] : pages_) page_numbers.insert(no);
  for (const auto& [no, _] : other.pages_) page_numbers.insert(no);

  for (std::uint32_t no : page_numbers) {
    const Page* mine = find_page(no);
    const Page* theirs = other.find_page(no);
    if (mine == theirs) continue;
    const Page& a = mine ? *mine : zero_page();
    const Page& b = theirs ? *theirs : zero_page();
    if (std::memcmp(a.data(), b.data(), kPageSize) == 0) continue;

    // Walk the page in segments that are either wholly excluded or wholly
    // compared.
    const std::uint64_t page_begin = std::uint64_t{no} << kPageBits;
    std::uint64_t cur = page_begin;
    const std::uint64_t page_end = page_begin + kPageSize;
    while (cur < page_end) {
      std::uint64_t next = page_end;
      bool skip = false;
      for (const auto& r : excluded) {
        if (r.size == 0) continue;
        if (cur >= r.begin && cur < r.end()) {
          skip = true;
          next = std::min(next, r.end());
          break;
        }
        if (r.begin > cur) next = std::min<std::uint64_t>(next, r.begin);
      }
      if (skip) {
        // Overlapping exclusions may extend the skipped segment further.
        cur = next;
        continue;
      }
      const auto off = static_cast<std::size_t>(cur - page_begin);
      const auto len = static_cast<std::size_t>(next - cur);
      if (std::memcmp(a.data() + off, b.data() + off, len) != 0) {
        for (std::size_t i = 0; i < len; ++i) {
          if (a[off + i] != b[off + i]) return static_cast<std::uint32_t>(cur + i);
        }
      }
      cur = next;
    }
  }
  return std::nullopt;
}

std::optional<std::uint32_t> Memory::first_difference_in(const Memory& other, const AddressRange& range) const {
  std::uint64_t cur = range.begin;
  const std::uint64_t end = range.end();
  while (cur < end) {
    const auto addr = static_cast<std::uint32_t>(cur);
    const std::uint32_t no = addr >> kPageBits;
    const std::uint32_t offset = addr & (kPageSize - 1);
    const std::uint64_t chunk = std::min<std::uint64_t>(kPageSize - offset, end - cur);
    const Page* mine = find_page(no);
    const Page* theirs = other.find_page(no);
    if (mine != theirs) {
      const Page& a = mine ? *mine : zero_page();
      const Page& b = theirs ? *theirs : zero_page();
      if (std::memcmp(a.data() + offset, b.data() + offset, chunk) != 0) {
        for (std::uint64_t i = 0; i < chunk; ++i) {
          if (a[offset + i] != b[offset + i]) return static_cast<std::uint32_t>(addr + i);
        }
      }
    }
    cur += chunk;
  }
  return std::nullopt;
}

std::vector<std::uint32_t> Memory::nonzero_addresses() const {
  std::vector<std::uint32_t> out;
  for (const auto& [no, page] : pages_) {
    for (std::uint32_t i = 0; i < kPageSize; ++i) {
      if ((*page)[i] != 0) out.push_back((no << kPageBits) | i);
    }
  }
  return out;
}

std::vector<std::uint32_t> Memory::resident_pages() const {
  std::vector<std::uint32_t> out;
  out.reserve(pages_.size());
  for (const auto& [no, _] : pages_) out.push_back(no);
  return out;
}

}  // namespace y86pp
