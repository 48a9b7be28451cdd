#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "htmseq/error.hpp"
#include "htmseq/random.hpp"

namespace htmseq {

/// Fixed-width binary vector stored as its sorted active-bit indices.
///
/// Values are immutable once built. Every constructor validates that indices
/// are strictly increasing and below the width.
class Sdr {
 public:
  using Index = std::uint32_t;

  Sdr() = default;

  explicit Sdr(std::size_t width) : width_(width) {}

  Sdr(std::size_t width, std::vector<Index> active) : width_(width), active_(std::move(active)) {
    for (std::size_t i = 0; i < active_.size(); ++i) {
      if (active_[i] >= width_) {
        throw Error("sdr index " + std::to_string(active_[i]) + " out of range for width " +
                    std::to_string(width_));
      }
      if (i > 0 && active_[i] <= active_[i - 1]) {
        throw Error("sdr indices must be strictly increasing");
      }
    }
  }

  // Sorts and deduplicates before validating.
  static Sdr from_unsorted(std::size_t width, std::vector<Index> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    return Sdr(width, std::move(indices));
  }

  std::size_t width() const noexcept { return width_; }
  std::span<const Index> active() const noexcept { return active_; }
  std::size_t size() const noexcept { return active_.size(); }
  bool empty() const noexcept { return active_.empty(); }

  bool contains(Index bit) const { return std::binary_search(active_.begin(), active_.end(), bit); }

  double sparsity() const {
    return width_ == 0 ? 0.0 : static_cast<double>(active_.size()) / static_cast<double>(width_);
  }

  // `width|i1,i2,...`
  std::string to_string() const {
    std::string out = std::to_string(width_);
    out += '|';
    for (std::size_t i = 0; i < active_.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(active_[i]);
    }
    return out;
  }

  static Sdr parse(std::string_view text) {
    const auto bar = text.find('|');
    if (bar == std::string_view::npos) throw Error("sdr text missing '|': " + std::string(text));
    std::size_t width = 0;
    const auto head = text.substr(0, bar);
    if (auto [p, ec] = std::from_chars(head.data(), head.data() + head.size(), width);
        ec != std::errc{} || p != head.data() + head.size()) {
      throw Error("bad sdr width: " + std::string(head));
    }
    std::vector<Index> active;
    auto rest = text.substr(bar + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto tok = rest.substr(0, comma);
      Index v = 0;
      if (auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
          ec != std::errc{} || p != tok.data() + tok.size()) {
        throw Error("bad sdr index: " + std::string(tok));
      }
      active.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    return Sdr(width, std::move(active));
  }

  friend bool operator==(const Sdr&, const Sdr&) = default;

 private:
  std::size_t width_ = 0;
  std::vector<Index> active_;
};

inline std::size_t overlap(const Sdr& a, const Sdr& b) {
  if (a.width() != b.width()) throw WidthMismatch(a.width(), b.width());
  const auto x = a.active();
  const auto y = b.active();
  std::size_t count = 0;
  std::size_t i = 0, j = 0;
  while (i < x.size() && j < y.size()) {
    if (x[i] < y[j]) {
      ++i;
    } else if (y[j] < x[i]) {
      ++j;
    } else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

inline Sdr sdr_union(std::span<const Sdr> sdrs) {
  if (sdrs.empty()) throw Error("union of an empty list of sdrs");
  const std::size_t width = sdrs.front().width();
  std::vector<Sdr::Index> merged;
  for (const Sdr& s : sdrs) {
    if (s.width() != width) throw WidthMismatch(width, s.width());
    std::vector<Sdr::Index> next;
    next.reserve(merged.size() + s.size());
    std::set_union(merged.begin(), merged.end(), s.active().begin(), s.active().end(),
                   std::back_inserter(next));
    merged.swap(next);
  }
  return Sdr(width, std::move(merged));
}

// Places each part side by side; part k's bits are offset by the widths of parts 0..k-1.
inline Sdr concatenate(std::span<const Sdr> parts) {
  std::size_t width = 0;
  std::vector<Sdr::Index> active;
  for (const Sdr& p : parts) {
    for (auto bit : p.active()) active.push_back(static_cast<Sdr::Index>(bit + width));
    width += p.width();
  }
  return Sdr(width, std::move(active));
}

// Deterministic in (width, num_active, seed). Floyd's sampling keeps the cost O(num_active).
inline std::ostream& operator<<(std::ostream& out, const Sdr& s) { return out << s.to_string(); }

inline Sdr random_sdr(std::size_t width, std::size_t num_active, std::uint64_t seed) {
  if (width == 0) throw Error("sdr width must be positive");
  if (num_active > width) {
    throw Error("cannot draw " + std::to_string(num_active) + " active bits from width " +
                std::to_string(width));
  }
  Rng rng(seed);
  std::unordered_set<Sdr::Index> chosen;
  std::vector<Sdr::Index> active;
  active.reserve(num_active);
  for (std::size_t j = width - num_active; j < width; ++j) {
    auto t = static_cast<Sdr::Index>(rng.below(j + 1));
    if (!chosen.insert(t).second) {
      t = static_cast<Sdr::Index>(j);
      chosen.insert(t);
    }
    active.push_back(t);
  }
  std::sort(active.begin(), active.end());
  return Sdr(width, std::move(active));
}

}  // namespace htmseq
