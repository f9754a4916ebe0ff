#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
// Wrong magic bytes or an unparsable structure.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
// Tensor names or shapes disagree with the model being restored.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const NamedTensor&) const = default;
};

struct CheckpointData {
  std::vector<NamedTensor> tensors;
  std::string metadata;  // UTF-8 JSON
  bool operator==(const CheckpointData&) const = default;
};

// Layout: "ISLA", u32 version, u32 tensor count, then per tensor
// {u32 name length, name bytes, u32 rank, u32 dims...}, then the raw f32
// payloads in table order, then u64 metadata length and the metadata bytes.
// All integers and floats are little-endian.
std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint_file(const std::string& path);

}  // namespace layoutsynth
