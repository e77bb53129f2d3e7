#pragma once

#include <filesystem>

#include "splitee/container.hpp"
#include "splitee/data/dataset.hpp"

namespace splitee::data {

/// Stores a dataset in the SPLITEE1 container (labels as float64).
inline void save_dataset(const std::filesystem::path &path, const Dataset &d) {
  Container c;
  c.kind = "dataset";
  c.meta = {{"name", d.name}, {"num_classes", d.num_classes}};
  c.tensors.emplace("images", Tensor(d.images.shape, d.images.values));
  Tensor labels({d.labels.size()});
  for (std::size_t i = 0; i < d.labels.size(); ++i) labels[i] = d.labels[i];
  c.tensors.emplace("labels", std::move(labels));
  write_container(path, c);
}

inline Dataset load_dataset(const std::filesystem::path &path) {
  auto c = read_container(path);
  if (c.kind != "dataset") throw format_error(path.string() + ": container kind '" + c.kind + "' is not a dataset");
  Dataset d;
  try {
    d.name = c.meta.at("name").get<std::string>();
    d.num_classes = c.meta.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception &e) {
    throw format_error(path.string() + ": bad metadata: " + e.what());
  }
  auto img = c.tensors.find("images");
  auto lab = c.tensors.find("labels");
  if (img == c.tensors.end() || lab == c.tensors.end()) throw format_error(path.string() + ": missing images or labels");
  d.images = std::move(img->second);
  for (double v : lab->second.values) {
    if (v != static_cast<double>(static_cast<int>(v))) throw format_error(path.string() + ": non-integer label");
    d.labels.push_back(static_cast<int>(v));
  }
  try {
    d.validate();
  } catch (const error &e) {
    throw format_error(path.string() + ": " + e.what());
  }
  return d;
}

} // namespace splitee::data
