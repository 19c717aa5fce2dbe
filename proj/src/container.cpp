#include "tltrade/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "tltrade/errors.hpp"
#include "tltrade/rng.hpp"

namespace tlt {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ImportError("container truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(std::span<const ContainerEntry> entries) {
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const ContainerEntry& e : entries) {
    const std::size_t expected = std::accumulate(e.dims.begin(), e.dims.end(), std::size_t{1},
                                                 std::multiplies<>());
    if (e.dims.size() > 255 || expected != e.weights.size()) {
      throw ShapeError("container entry dims do not match its payload");
    }
    out.push_back(static_cast<std::uint8_t>(e.kind));
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (const std::uint32_t d : e.dims) put_u32(out, d);
    put_u32(out, static_cast<std::uint32_t>(e.bias.size()));
  }
  for (const ContainerEntry& e : entries) {
    for (const float v : e.weights) put_f32(out, v);
    for (const float v : e.bias) put_f32(out, v);
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw ImportError("container truncated");
  const std::span<const std::uint8_t> body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.last(8));
  const std::uint64_t stored = tail.u64();
  const std::uint64_t actual = fnv1a64(body);
  if (stored != actual) {
    throw ImportError(fmt::format("container checksum mismatch ({:016x} != {:016x})", stored, actual));
  }

  Reader in(body);
  Container c;
  c.checksum = stored;
  const std::uint32_t count = in.u32();
  if (count > body.size()) throw ImportError("container entry count is implausible");
  c.entries.resize(count);
  for (ContainerEntry& e : c.entries) {
    const std::uint8_t kind = in.u8();
    if (kind > static_cast<std::uint8_t>(EntryKind::tensor)) {
      throw ImportError(fmt::format("unknown container entry kind {}", kind));
    }
    e.kind = static_cast<EntryKind>(kind);
    e.dims.resize(in.u8());
    for (std::uint32_t& d : e.dims) d = in.u32();
    e.bias.resize(in.u32());
    const std::size_t n = std::accumulate(e.dims.begin(), e.dims.end(), std::size_t{1},
                                          std::multiplies<>());
    if (n > body.size()) throw ImportError("container entry size is implausible");
    e.weights.resize(n);
  }
  for (ContainerEntry& e : c.entries) {
    if (in.remaining() < 4 * (e.weights.size() + e.bias.size())) {
      throw ImportError("container truncated");
    }
    for (float& v : e.weights) v = in.f32();
    for (float& v : e.bias) v = in.f32();
  }
  if (in.remaining() != 0) throw ImportError("container has trailing bytes");
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImportError(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t write_container(const std::filesystem::path& path,
                              std::span<const ContainerEntry> entries) {
  const auto bytes = encode_container(entries);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImportError(fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  Reader tail(std::span<const std::uint8_t>(bytes).last(8));
  return tail.u64();
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace tlt
