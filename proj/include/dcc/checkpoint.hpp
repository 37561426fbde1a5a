#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcc/params.hpp"
#include "dcc/tensor.hpp"

// Binary parameter checkpoints. All integers and values are little-endian.
//
//   magic      4 bytes  "DCCE"
//   version    u32      kCheckpointVersion
//   precision  u32      0 = f32, 1 = f64
//   count      u64      number of tensor records
//   record:    name_len u32, name bytes (UTF-8), rank u32, dims u64 x rank,
//              values (4 or 8 bytes each)
namespace dcc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  Precision precision = Precision::kF32;
  std::uint64_t count = 0;
};

template <typename T>
void write_checkpoint(std::ostream& os, const ParamStore<T>& params);
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params);

CheckpointHeader read_checkpoint_header(std::istream& is);
CheckpointHeader peek_checkpoint(const std::filesystem::path& path);

// Loads values into an already-built store. Every stored tensor must exist in
// `params` with an identical shape, and every tensor in `params` must be
// present; mismatches raise DataError naming the tensor.
template <typename T>
void read_checkpoint(std::istream& is, ParamStore<T>& params);
template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>& params);

}  // namespace dcc
