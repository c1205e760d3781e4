#include "tpc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "tpc/errors.hpp"
#include "tpc/tensor_io.hpp"

namespace tpc {

Dataset read_cifar10(std::istream& is, std::size_t max_records, const std::string& source) {
  Dataset ds;
  ds.num_classes = 10;
  ds.channels = 3;
  ds.side = 32;
  std::vector<unsigned char> buf(kCifarRecordBytes);
  std::uint64_t offset = 0;
  while (max_records == 0 || ds.size() < max_records) {
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(is.gcount());
    if (got == 0) break;
    if (got < kCifarRecordBytes) {
      throw FormatError(source + ": truncated CIFAR-10 record at byte offset " + std::to_string(offset) + " (" +
                        std::to_string(got) + " of " + std::to_string(kCifarRecordBytes) + " bytes)");
    }
    if (buf[0] > 9) {
      throw FormatError(source + ": label byte " + std::to_string(buf[0]) + " at byte offset " + std::to_string(offset));
    }
    Matrix<double> img(3, 1024);
    for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(buf[static_cast<std::size_t>(i) + 1]) / 255.0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(buf[0]);
    offset += kCifarRecordBytes;
  }
  return ds;
}

Dataset read_cifar10_file(const std::filesystem::path& file, std::size_t max_records) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  return read_cifar10(in, max_records, file.string());
}

Dataset make_synthetic_blobs(int count, int num_classes, int channels, int side, double noise, std::uint64_t seed) {
  if (count < 0 || num_classes < 1 || channels < 1 || side < 1) throw ContractError("synthetic blobs: bad geometry");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(side - 1));
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  const double sigma = std::max(1.0, side / 6.0);

  std::vector<Matrix<double>> prototypes;
  for (int c = 0; c < num_classes; ++c) {
    Matrix<double> p(channels, static_cast<Index>(side) * side);
    const double cy = pos(rng);
    const double cx = pos(rng);
    for (int ch = 0; ch < channels; ++ch) {
      const double a = amp(rng);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          p(ch, static_cast<Index>(y) * side + x) = a * std::exp(-d2 / (2 * sigma * sigma));
        }
      }
    }
    prototypes.push_back(std::move(p));
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.channels = channels;
  ds.side = side;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const int label = i % num_classes;
    Matrix<double> img = prototypes[static_cast<std::size_t>(label)];
    for (Index j = 0; j < img.size(); ++j) img.data()[j] += noise * gauss(rng);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

Dataset read_tensor_dir(const std::filesystem::path& dir, const std::string& split, int channels, int side) {
  auto open = [&](const std::string& name) {
    const auto path = dir / (split + "_" + name + ".tpt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_tensor(in);
  };
  const TensorRecord images = open("images");
  const TensorRecord labels = open("labels");
  if (images.extents.empty() || labels.extents.size() != 1 || images.extents[0] != labels.extents[0]) {
    throw FormatError(dir.string() + ": " + split + " images and labels disagree on record count");
  }
  const std::uint64_t n = images.extents[0];
  const std::uint64_t per = static_cast<std::uint64_t>(channels) * side * side;
  if (images.element_count() != n * per) {
    throw FormatError(dir.string() + ": " + split + " images do not hold " + std::to_string(per) + " values each");
  }
  Dataset ds;
  ds.channels = channels;
  ds.side = side;
  for (std::uint64_t i = 0; i < n; ++i) {
    Matrix<double> img(channels, static_cast<Index>(side) * side);
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * per), per, img.data());
    ds.images.push_back(std::move(img));
    const double l = labels.data[i];
    if (l < 0 || l != std::floor(l)) throw FormatError(dir.string() + ": non-integer label at index " + std::to_string(i));
    ds.labels.push_back(static_cast<int>(l));
  }
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

void normalize(Dataset& ds, const std::vector<double>& mean, const std::vector<double>& stddev) {
  if (mean.empty() && stddev.empty()) return;
  if (static_cast<int>(mean.size()) != ds.channels || static_cast<int>(stddev.size()) != ds.channels) {
    throw ConfigError("data.mean", "normalization needs one mean and one stddev per channel");
  }
  for (auto& img : ds.images) {
    for (int c = 0; c < ds.channels; ++c) img.row(c) = (img.row(c).array() - mean[static_cast<std::size_t>(c)]) / stddev[static_cast<std::size_t>(c)];
  }
}

namespace {

Dataset cifar_split(const std::filesystem::path& path, bool train, std::size_t limit) {
  if (std::filesystem::is_regular_file(path)) return read_cifar10_file(path, limit);
  Dataset out;
  std::vector<std::filesystem::path> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back(path / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(path / "test_batch.bin");
  }
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) continue;
    std::size_t remaining = limit == 0 ? 0 : limit - out.size();
    Dataset part = read_cifar10_file(f, remaining);
    out.channels = part.channels;
    out.side = part.side;
    out.num_classes = part.num_classes;
    for (std::size_t i = 0; i < part.size(); ++i) {
      out.images.push_back(std::move(part.images[i]));
      out.labels.push_back(part.labels[i]);
    }
    if (limit != 0 && out.size() >= limit) break;
  }
  if (out.empty()) throw FormatError("no CIFAR-10 records found under " + path.string());
  return out;
}

}  // namespace

DatasetSplits load_datasets(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const DataConfig& d = cfg.data;
  const int classes = d.num_classes > 0 ? d.num_classes : m.num_classes;
  DatasetSplits s;
  if (d.source == "synthetic-blobs") {
    const std::uint64_t seed = d.shuffle_seed != 0 ? d.shuffle_seed : cfg.train.seed;
    // one prototype set per seed; eval draws fresh noise from the same classes
    Dataset all = make_synthetic_blobs(d.train_size + d.eval_size, classes, m.in_channels, m.image_size, d.noise,
                                       seed * 0x9E3779B97F4A7C15ull + 1);
    for (std::size_t i = 0; i < all.size(); ++i) {
      Dataset& dst = i < static_cast<std::size_t>(d.train_size) ? s.train : s.eval;
      dst.images.push_back(std::move(all.images[i]));
      dst.labels.push_back(all.labels[i]);
    }
    for (Dataset* ds : {&s.train, &s.eval}) {
      ds->num_classes = classes;
      ds->channels = m.in_channels;
      ds->side = m.image_size;
    }
  } else if (d.source == "cifar10-binary") {
    if (d.path.empty()) throw ConfigError("data.path", "cifar10-binary needs a path");
    s.train = cifar_split(d.path, true, static_cast<std::size_t>(d.train_size));
    s.eval = cifar_split(d.path, false, static_cast<std::size_t>(d.eval_size));
  } else if (d.source == "tensor-dir") {
    if (d.path.empty()) throw ConfigError("data.path", "tensor-dir needs a path");
    s.train = read_tensor_dir(d.path, "train", m.in_channels, m.image_size);
    s.eval = read_tensor_dir(d.path, "eval", m.in_channels, m.image_size);
  } else {
    throw ConfigError("data.source", "unknown source '" + d.source + "'");
  }
  for (Dataset* ds : {&s.train, &s.eval}) {
    if (ds->channels != m.in_channels || ds->side != m.image_size) {
      throw ConfigError("model.image_size", "dataset geometry " + std::to_string(ds->channels) + "x" +
                                                std::to_string(ds->side) + "x" + std::to_string(ds->side) +
                                                " does not match the model");
    }
    for (int l : ds->labels) {
      if (l < 0 || l >= classes) throw ConfigError("data.num_classes", "label " + std::to_string(l) + " out of range");
    }
    ds->num_classes = classes;
    normalize(*ds, d.mean, d.stddev);
  }
  return s;
}

}  // namespace tpc
