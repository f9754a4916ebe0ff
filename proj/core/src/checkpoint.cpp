#include "layoutsynth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace layoutsynth {
namespace {

constexpr char kMagic[4] = {'I', 'S', 'L', 'A'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void bytes(void* p, std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    if (numel(t.shape) != t.data.size()) {
      throw CheckpointFormatError("tensor " + t.name + ": shape " + to_string(t.shape) +
                                  " does not match " + std::to_string(t.data.size()) +
                                  " values");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
  }
  for (const auto& t : data.tensors) w.bytes(t.data.data(), t.data.size() * sizeof(float));
  w.u64(data.metadata.size());
  w.bytes(data.metadata.data(), data.metadata.size());
  return w.take();
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  if (bytes.size() < sizeof magic) throw CheckpointFormatError("not a checkpoint: too short");
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointFormatError("not a checkpoint: bad magic bytes");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointData out;
  const std::uint32_t count = r.u32("tensor count");
  // Each table entry needs at least 8 bytes; reject absurd counts early.
  if (static_cast<std::uint64_t>(count) * 8 > r.remaining()) {
    throw CheckpointTruncatedError("checkpoint truncated in the tensor table");
  }
  out.tensors.resize(count);
  for (auto& t : out.tensors) {
    const std::uint32_t len = r.u32("name length");
    if (len > r.remaining()) throw CheckpointTruncatedError("checkpoint truncated in a name");
    t.name.resize(len);
    r.bytes(t.name.data(), len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (static_cast<std::uint64_t>(rank) * 4 > r.remaining()) {
      throw CheckpointTruncatedError("checkpoint truncated in a shape");
    }
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u32("dimension"));
  }
  for (auto& t : out.tensors) {
    const std::size_t n = numel(t.shape);
    if (n > r.remaining() / sizeof(float)) {
      throw CheckpointTruncatedError("checkpoint truncated in tensor " + t.name);
    }
    t.data.resize(n);
    r.bytes(t.data.data(), n * sizeof(float), "tensor payload");
  }
  const std::uint64_t meta = r.u64("metadata length");
  if (meta > r.remaining()) throw CheckpointTruncatedError("checkpoint truncated in metadata");
  out.metadata.resize(meta);
  r.bytes(out.metadata.data(), meta, "metadata");
  if (r.remaining() != 0) throw CheckpointFormatError("trailing bytes after checkpoint");
  return out;
}

void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  // Write to a sibling file and rename so readers never see a partial file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace layoutsynth
