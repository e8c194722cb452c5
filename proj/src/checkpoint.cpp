#include "caf/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "caf/binary_io.hpp"
#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace caf {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string encode_checkpoint(FusionModel& model) {
  ByteWriter payload;
  const std::string config_text = model.config().to_kv().canonical();
  payload.u32(static_cast<std::uint32_t>(config_text.size()));
  payload.bytes(config_text);

  const auto entries = model.state();
  payload.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    payload.u32(static_cast<std::uint32_t>(e.name.size()));
    payload.bytes(e.name);
    const Shape& shape = e.tensor->shape();
    payload.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto x : shape) payload.u64(x);
    for (double v : e.tensor->values()) payload.f64(v);
  }

  ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 4));
  out.u32(kCheckpointVersion);
  out.bytes(payload.data());
  out.u64(fnv1a64(payload.data()));
  return out.take();
}

FusionModel decode_checkpoint(std::string_view bytes, const std::string& source) {
  ByteReader rd(bytes, source);
  if (rd.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError(source + ": bad magic, not a checkpoint");
  const auto version = rd.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  // Verify the digest before trusting any length field.
  if (rd.remaining() < 8) throw FormatError(source + ": truncated");
  const std::string_view payload = bytes.substr(rd.position(), rd.remaining() - 8);
  ByteReader tail(bytes.substr(bytes.size() - 8), source);
  if (tail.u64() != fnv1a64(payload)) throw FormatError(source + ": checksum mismatch (corrupt or truncated)");

  ByteReader pr(payload, source);
  const auto config_len = pr.u32();
  const FusionConfig config = FusionConfig::from_kv(KeyValueText::parse(pr.bytes(config_len), source));

  Rng scratch(0);
  FusionModel model = FusionModel::build(config, scratch);
  auto entries = model.state();
  const auto count = pr.u32();
  if (count != entries.size()) {
    throw FormatError(source + ": expected " + std::to_string(entries.size()) + " tensors, found " +
                      std::to_string(count));
  }
  for (auto& e : entries) {
    const auto name_len = pr.u32();
    const std::string name(pr.bytes(name_len));
    if (name != e.name) throw FormatError(source + ": expected tensor '" + e.name + "', found '" + name + "'");
    const auto rank = pr.u32();
    Shape shape(rank);
    for (auto& x : shape) x = pr.u64();
    if (shape != e.tensor->shape()) {
      throw FormatError(source + ": tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(e.tensor->shape()));
    }
    for (auto& v : e.tensor->values()) v = pr.f64();
  }
  if (pr.remaining() != 0) throw FormatError(source + ": trailing bytes after tensor blocks");
  return model;
}

void save_checkpoint(FusionModel& model, const std::string& path) { write_file(path, encode_checkpoint(model)); }

FusionModel load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

FusionModel load_checkpoint(const std::string& path, const FusionConfig& expected) {
  FusionModel model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    throw UsageError(path + ": checkpoint config mismatch\n  checkpoint: " + model.config().to_kv().canonical() +
                     "  expected:   " + expected.to_kv().canonical());
  }
  return model;
}

}  // namespace caf
