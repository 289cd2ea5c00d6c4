#include "mdgait/checkpoint.hpp"

#include <limits>

#include "mdgait/binary_io.hpp"
#include "mdgait/error.hpp"

namespace mdgait::ad {

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> entries) {
  io::ByteWriter w;
  w.magic("MDCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw InvalidArgument("checkpoint: name too long");
    if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw InvalidArgument("checkpoint: rank too high");
    if (numel(e.shape) != e.data.size()) throw ShapeError("checkpoint: entry " + e.name + " shape/data mismatch");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.raw({reinterpret_cast<const std::uint8_t*>(e.name.data()), e.name.size()});
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : e.data) w.put<float>(v);
  }
  return w.bytes();
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("MDCK");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      version_at);
  }
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    const auto len = r.get<std::uint16_t>("name length");
    const auto name = r.take(len, "name");
    e.name.assign(name.begin(), name.end());
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint32_t>("dimension"));
    const std::size_t n = numel(e.shape);
    if (r.remaining() / sizeof(float) < n) throw FormatError("truncated data for " + e.name, r.offset());
    e.data.resize(n);
    for (float& v : e.data) v = r.get<float>("parameter data");
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint entries", r.offset());
  return out;
}

void save_checkpoint(std::span<const NamedArray> entries, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(entries));
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace mdgait::ad
