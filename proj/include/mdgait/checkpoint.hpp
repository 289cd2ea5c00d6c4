#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mdgait/tensor.hpp"

namespace mdgait::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// "MDCK" parameter checkpoint: u32 version, u32 entry count, then per entry
// u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 data.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> entries);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(std::span<const NamedArray> entries, const std::filesystem::path& path);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace mdgait::ad
