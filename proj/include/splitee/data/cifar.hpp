#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "splitee/data/dataset.hpp"

namespace splitee::data {

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

/// Parses CIFAR-10 binary records: one label byte then 3072 pixel bytes as
/// R, G, B planes in row-major order.
inline Dataset cifar10_parse(const std::vector<unsigned char> &bytes, const std::string &name) {
  if (bytes.empty()) throw format_error(name + ": empty file");
  if (bytes.size() % kCifarRecord != 0) {
    const auto offset = bytes.size() - bytes.size() % kCifarRecord;
    throw format_error(name + ": truncated record at byte offset " + std::to_string(offset) + " (file has " +
                       std::to_string(bytes.size()) + " bytes)");
  }
  const auto M = bytes.size() / kCifarRecord;
  Dataset d;
  d.name = name;
  d.num_classes = 10;
  d.images = Tensor({M, 3, 32, 32});
  d.labels.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    const auto off = i * kCifarRecord;
    const unsigned label = bytes[off];
    if (label > 9) throw format_error(name + ": unknown label byte " + std::to_string(label) + " at byte offset " + std::to_string(off));
    d.labels[i] = static_cast<int>(label);
    double *img = d.images.data() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) img[p] = static_cast<double>(bytes[off + 1 + p]) / 255.0;
  }
  return d;
}

inline Dataset cifar10_load(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return cifar10_parse(bytes, path.filename().string());
}

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

inline Dataset concat(std::vector<Dataset> parts, const std::string &name) {
  if (parts.empty()) throw config_error("nothing to concatenate");
  std::size_t M = 0;
  for (const auto &p : parts) M += p.size();
  Dataset d;
  d.name = name;
  d.num_classes = parts.front().num_classes;
  auto shape = parts.front().images.shape;
  shape[0] = M;
  d.images = Tensor(shape);
  std::size_t at = 0;
  for (const auto &p : parts) {
    if (p.sample_numel() != parts.front().sample_numel()) throw dimension_error("cannot concatenate differently shaped datasets");
    std::copy(p.images.values.begin(), p.images.values.end(), d.images.values.begin() + static_cast<std::ptrdiff_t>(at));
    at += p.images.numel();
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
  }
  return d;
}

/// Loads data_batch_1..5.bin (those present, at least one) and test_batch.bin
/// from the standard CIFAR-10 binary directory.
inline TrainTestSplit cifar10_load_dir(const std::filesystem::path &dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) {
    const auto f = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (std::filesystem::exists(f)) train.push_back(cifar10_load(f));
  }
  if (train.empty()) throw format_error(dir.string() + ": no data_batch_*.bin files");
  const auto test_file = dir / "test_batch.bin";
  if (!std::filesystem::exists(test_file)) throw format_error(dir.string() + ": missing test_batch.bin");
  return {concat(std::move(train), "cifar10-train"), [&] {
            auto t = cifar10_load(test_file);
            t.name = "cifar10-test";
            return t;
          }()};
}

} // namespace splitee::data
