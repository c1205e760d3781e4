#pragma once

// Image datasets. Images are stored as [C x H*W] row-major matrices.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <vector>

#include "tpc/config.hpp"
#include "tpc/tensor.hpp"

namespace tpc {

struct Dataset {
  std::vector<Matrix<double>> images;
  std::vector<int> labels;
  int num_classes = 0;
  int channels = 0;
  int side = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
};

struct DatasetSplits {
  Dataset train;
  Dataset eval;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads 3073-byte CIFAR-10 records (label byte + 3072 channel-planar pixel
/// bytes) until end of stream. `max_records` of 0 reads everything. A partial
/// record raises FormatError with its byte offset.
Dataset read_cifar10(std::istream& is, std::size_t max_records = 0, const std::string& source = "stream");
Dataset read_cifar10_file(const std::filesystem::path& file, std::size_t max_records = 0);

/// Class-conditional Gaussian bumps plus per-pixel noise. Deterministic in seed.
Dataset make_synthetic_blobs(int count, int num_classes, int channels, int side, double noise, std::uint64_t seed);

/// Loads `<split>_images` ([N x C x H x W] or [N x C*H*W]) and `<split>_labels`
/// ([N]) tensor records from a directory.
Dataset read_tensor_dir(const std::filesystem::path& dir, const std::string& split, int channels, int side);

/// Builds both splits from the run configuration; applies normalization and
/// checks labels against the class count.
DatasetSplits load_datasets(const RunConfig& cfg);

/// Per-channel (x - mean) / stddev in place.
void normalize(Dataset& ds, const std::vector<double>& mean, const std::vector<double>& stddev);

}  // namespace tpc
