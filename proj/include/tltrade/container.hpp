#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tlt {

// Binary tensor container shared by weights, activations, embeddings and
// classifier models. All integers and reals are little-endian:
//
//   u32 entry_count
//   entry_count x { u8 kind, u8 rank, rank x u32 dim, u32 bias_len }
//   entry_count x { f32[prod(dims)] weights (row-major), f32[bias_len] bias }
//   u64 checksum   (FNV-1a 64 over every preceding byte)
enum class EntryKind : std::uint8_t { conv = 0, dense = 1, logits = 2, tensor = 3 };

struct ContainerEntry {
  EntryKind kind = EntryKind::tensor;
  std::vector<std::uint32_t> dims;
  std::vector<float> weights;
  std::vector<float> bias;

  friend bool operator==(const ContainerEntry&, const ContainerEntry&) = default;
};

struct Container {
  std::vector<ContainerEntry> entries;
  std::uint64_t checksum = 0;
};

std::vector<std::uint8_t> encode_container(std::span<const ContainerEntry> entries);
// Throws ImportError on truncation, trailing bytes, malformed headers or a
// checksum mismatch.
Container decode_container(std::span<const std::uint8_t> bytes);

std::uint64_t write_container(const std::filesystem::path& path,
                              std::span<const ContainerEntry> entries);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace tlt
