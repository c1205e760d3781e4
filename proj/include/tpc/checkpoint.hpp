#pragma once

// Binary checkpoint:
//   "TPCVCKPT" | u32 version | config JSON | u64 step | u64 epoch |
//   RNG state | u32 n | n x (name, tensor) | i64 optimizer step |
//   u32 m | m x (first moment, second moment)

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tpc/config.hpp"
#include "tpc/tensor_io.hpp"

namespace tpc {

inline constexpr char kCheckpointMagic[8] = {'T', 'P', 'C', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, TensorRecord>> tensors;
  std::int64_t optim_step = 0;
  std::vector<TensorRecord> first_moments;
  std::vector<TensorRecord> second_moments;

  RunConfig config() const { return RunConfig::from_json(Json::parse(config_json)); }
  const TensorRecord& tensor(const std::string& name) const;
};

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tpc
