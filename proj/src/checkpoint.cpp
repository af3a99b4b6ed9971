#include "bfr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bfr/error.hpp"

namespace bfr {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* s, std::size_t n) { bytes.insert(bytes.end(), s, s + n); }
  std::vector<std::uint8_t> bytes;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const std::string& name) : bytes_(b), name_(name) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t get(int n) {
    if (remaining() < static_cast<std::size_t>(n))
      throw FormatError(name_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const stunet::Weights& weights) {
  const auto& c = weights.config;
  Writer w;
  w.raw("STUN", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.base_channels));
  for (auto n : c.stl_counts) w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(c.window_size));
  for (std::size_t l = 0; l < stunet::kLevels; ++l) w.u32(static_cast<std::uint32_t>(c.level_heads(l)));
  w.f64(c.mlp_ratio);
  w.u32(static_cast<std::uint32_t>(c.image_channels));
  w.u32(static_cast<std::uint32_t>(c.height));
  w.u32(static_cast<std::uint32_t>(c.width));
  const auto params = weights.parameters();
  w.u64(params.size());
  w.u64(weights.scalar_count());
  for (const auto& p : params)
    for (double v : p.data()) w.f64(v);
  return std::move(w.bytes);
}

stunet::Weights deserialize(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "STUN", 4) != 0)
    throw FormatError(name + ": not a STUNet checkpoint (bad magic at byte 0)");
  Reader r(bytes.subspan(4), name);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  stunet::Config c;
  c.base_channels = r.u32();
  for (auto& n : c.stl_counts) n = r.u32();
  c.window_size = r.u32();
  for (auto& h : c.heads) h = r.u32();
  c.mlp_ratio = r.f64();
  c.image_channels = r.u32();
  c.height = r.u32();
  c.width = r.u32();
  stunet::Weights weights = stunet::build(c, 0);
  auto params = weights.parameters();
  const std::uint64_t tensors = r.u64(), scalars = r.u64();
  if (tensors != params.size() || scalars != weights.scalar_count())
    throw FormatError(name + ": parameter count mismatch (file " + std::to_string(tensors) + " tensors / " +
                      std::to_string(scalars) + " scalars, config implies " + std::to_string(params.size()) + " / " +
                      std::to_string(weights.scalar_count()) + ")");
  if (r.remaining() != scalars * 8)
    throw FormatError(name + ": expected " + std::to_string(scalars * 8) + " parameter bytes after byte " +
                      std::to_string(r.offset() + 4) + ", found " + std::to_string(r.remaining()));
  for (auto& p : params)
    for (double& v : p.mutable_data()) v = r.f64();
  return weights;
}

void save_checkpoint(const stunet::Weights& weights, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize(weights);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  nlohmann::json side = weights.config.to_json();
  side["format_version"] = kCheckpointVersion;
  side["scalars"] = weights.scalar_count();
  std::ofstream js(path.string() + ".json");
  if (!js) throw IoError("cannot write " + path.string() + ".json");
  js << side.dump(2) << "\n";
}

stunet::Weights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace bfr
