#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stf/tensor.hpp"

namespace stf {

// Checkpoint file: magic "STFM", u32 version, config snapshot, iteration
// counter, RNG state, then named tensor records (name, rank, extents,
// float64 payload). All integers and floats little-endian.
constexpr uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  uint32_t version = kCheckpointVersion;
  std::string config_text;
  uint64_t iteration = 0;
  std::array<uint64_t, 4> rng_state{{0, 0, 0, 0}};
  std::vector<TensorRecord> tensors;

  void add_tensor(const std::string& name, Shape shape, std::vector<double> values);
  const TensorRecord& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  void add_store(const std::string& prefix, const ParamStore& store);
  // Copies values back into an existing store; shapes must match exactly.
  void restore_store(const std::string& prefix, ParamStore& store) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace stf
