#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "htmseq/error.hpp"
#include "htmseq/random.hpp"

namespace htmseq::io {

// Little-endian byte buffer. Snapshots are framed as
//   magic (8 bytes) | version u32 | payload | fnv1a64(magic..payload) u64
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  template <class T>
  void u32s(const std::vector<T>& v) {
    u64(v.size());
    for (auto x : v) u32(static_cast<std::uint32_t>(x));
  }
  void raw(std::string_view bytes) { buf_.append(bytes); }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : data_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    const auto n = length();
    return std::string(take(n));
  }
  template <class T>
  std::vector<T> u32s() {
    const auto n = length(4);
    std::vector<T> v;
    v.reserve(n);
    for (std::size_t i = 0; i < n; ++i) v.push_back(static_cast<T>(u32()));
    return v;
  }
  // Element count guarded against the bytes that remain, so corrupt counts
  // fail cleanly instead of allocating.
  std::size_t length(std::size_t min_element_bytes = 1) {
    const auto n = u64();
    if (n > remaining() / (min_element_bytes ? min_element_bytes : 1)) {
      throw SnapshotError("snapshot truncated or corrupt (length field)");
    }
    return static_cast<std::size_t>(n);
  }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw SnapshotError("snapshot truncated");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <class U>
  U get() {
    auto b = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(b[i])) << (8 * i);
    }
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline void write_framed(std::ostream& out, std::string_view magic, std::uint32_t version,
                         const Writer& payload) {
  Writer frame;
  frame.raw(magic);
  frame.u32(version);
  frame.raw(payload.bytes());
  frame.u64(fnv1a64(frame.bytes()));
  out.write(frame.bytes().data(), static_cast<std::streamsize>(frame.bytes().size()));
  if (!out) throw Error("failed to write snapshot");
}

// Returns the verified payload bytes.
inline std::string read_framed(std::istream& in, std::string_view magic, std::uint32_t version) {
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < magic.size() + 4 + 8 || std::string_view(bytes).substr(0, magic.size()) != magic) {
    throw SnapshotError("not a snapshot of the expected kind");
  }
  const std::string_view body(bytes.data(), bytes.size() - 8);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.u64() != fnv1a64(body)) throw SnapshotError("snapshot checksum mismatch (corrupted file)");
  Reader head(body.substr(magic.size(), 4));
  const auto found = head.u32();
  if (found != version) {
    throw SnapshotError("snapshot version mismatch: file has " + std::to_string(found) +
                        ", expected " + std::to_string(version));
  }
  return std::string(body.substr(magic.size() + 4));
}

}  // namespace htmseq::io
