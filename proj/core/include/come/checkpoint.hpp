#pragma once

#include <filesystem>
#include <string>

#include "come/model.hpp"

namespace come::model {

// Binary checkpoint container; layout in docs/checkpoint_format.md.
//   bytes 0..7   magic "COMECKPT"
//   u32 LE       format version (1)
//   u64 LE       header length H
//   H bytes      UTF-8 JSON header: config, version, vocabulary, tensor table
//   blobs        each tensor's rows*cols IEEE-754 binary64 values, LE, row-major,
//                in header order
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(const std::string& bytes);

}  // namespace come::model
