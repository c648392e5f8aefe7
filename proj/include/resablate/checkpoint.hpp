#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resablate/model.hpp"

namespace resablate {

// Binary container, all integers and scalars little-endian:
//
//   magic        8 bytes  "RSABCKPT"
//   version      u32      kCheckpointVersion
//   total_size   u64      byte length of the whole file
//   config       u32 length + canonical config text
//   record_count u32
//   records      per kernel address, in forward order:
//                  u16 length + address string
//                  u8 flags (bit 0: zeroed, bit 1: removed by folding)
//                  u32 array count, each array:
//                    u8 length + name, 4 x u32 shape, u64 count, count x f32
//   checksum     u32      CRC-32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'A', 'B', 'C', 'K', 'P', 'T'};

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);

// Atomic write (temporary file + rename).
void save_checkpoint(const Model& model, const std::filesystem::path& path);
// FormatError on bad magic, VersionError, TruncationError, ChecksumError.
Model load_checkpoint(const std::filesystem::path& path);

// Number of kernel records a checkpoint of this model holds.
std::size_t checkpoint_record_count(const Model& model);

}  // namespace resablate
