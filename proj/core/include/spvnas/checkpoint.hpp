#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spvnas/tensor_slot.hpp"

namespace spvnas {

class Network;

// On-disk layout, all integers and reals little-endian:
//   "SPVN"  u32 version
//   u32 metadata length, metadata bytes (JSON)
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, rank x u64 dims, f32 data
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string metadata;  // JSON text
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws DataError on I/O failure, bad magic, unknown version or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies the leading sub-block of `src` into `dst`; every destination
// dimension must be <= the source dimension and the ranks must agree.
void copy_leading_block(const float* src, const std::vector<std::size_t>& src_shape, float* dst,
                        const std::vector<std::size_t>& dst_shape);

// For every destination slot, copies the leading block of the same-named
// source tensor. Throws DataError if a destination tensor has no source.
void copy_tensors(const TensorList& src, TensorList& dst);
void load_tensors(const Checkpoint& src, TensorList& dst);

// Snapshot of a network: metadata records the allocation, family and
// elastic flag so the network can be rebuilt.
Checkpoint network_checkpoint(Network& net, const std::string& extra_metadata_json = "{}");
Network network_from_checkpoint(const Checkpoint& ckpt);

}  // namespace spvnas
