#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "caf/fusion_model.hpp"

namespace caf {

inline constexpr char kCheckpointMagic[4] = {'C', 'A', 'F', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "CAFM", u32 version, u32 config length + canonical config text,
// u32 block count, then per tensor: u32 name length + name, u32 rank,
// u64 extents, f64 values; finally a u64 FNV-1a digest of every byte after
// the version field. All integers and floats are little-endian.
std::string encode_checkpoint(FusionModel& model);
FusionModel decode_checkpoint(std::string_view bytes, const std::string& source = "<checkpoint>");

void save_checkpoint(FusionModel& model, const std::string& path);
FusionModel load_checkpoint(const std::string& path);
/// As above, but rejects a checkpoint whose config differs from `expected`.
FusionModel load_checkpoint(const std::string& path, const FusionConfig& expected);

}  // namespace caf
