#pragma once

#include <string>

#include "empssl/layers.hpp"

namespace empssl {

/// Binary checkpoint of a network's parameters and batchnorm running stats.
/// Layout: magic "EMPS", u32 format version, u32 tensor count, then per
/// tensor: u16 name length, name bytes, u8 rank, u32 dims, little-endian
/// f32 payload. Throws IoError on any format or shape violation.
void save_checkpoint(const Network& net, const std::string& path);
void load_checkpoint(Network& net, const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace empssl
