#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "splitee/container.hpp"
#include "splitee/model/split_model.hpp"

namespace splitee::model {

/// A client model and the server model that serves it, enough to run
/// collaborative inference. Optimizer state is not stored.
struct Checkpoint {
  BaseNetworkSpec spec;
  std::uint64_t seed = 0;
  ClientModel client;
  ServerModel server;
  nlohmann::json meta = nlohmann::json::object(); // caller-supplied extras
};

namespace detail {

inline void put_layers(Container &c, const std::string &prefix, const LayerState &ls) {
  for (const auto &[k, t] : ls.params) c.tensors.emplace(prefix + "params/" + k, Tensor(t.shape, t.values));
  for (const auto &[k, t] : ls.buffers) c.tensors.emplace(prefix + "buffers/" + k, Tensor(t.shape, t.values));
}

inline void take_layers(Container &c, const std::string &prefix, LayerState &ls, const std::string &source) {
  auto take = [&](ParameterSet &set, const std::string &kind) {
    for (auto &[k, t] : set) {
      auto it = c.tensors.find(prefix + kind + "/" + k);
      if (it == c.tensors.end()) throw format_error(source + ": missing tensor " + prefix + kind + "/" + k);
      if (it->second.shape != t.shape)
        throw format_error(source + ": tensor " + it->first + " has shape " + shape_str(it->second.shape) +
                           ", expected " + shape_str(t.shape));
      t.values = std::move(it->second.values);
      c.tensors.erase(it);
    }
  };
  take(ls.params, "params");
  take(ls.buffers, "buffers");
}

} // namespace detail

inline Container to_container(const Checkpoint &ck) {
  Container c;
  c.kind = "model";
  c.meta = {{"spec", to_json(ck.spec)},
            {"seed", ck.seed},
            {"end_layer", ck.client.end_layer},
            {"server_first_layer", ck.server.first_layer},
            {"extra", ck.meta}};
  for (const auto &ls : ck.client.layers) detail::put_layers(c, "client/", ls);
  detail::put_layers(c, "client/", ck.client.head);
  for (const auto &ls : ck.server.layers) detail::put_layers(c, "server/", ls);
  detail::put_layers(c, "server/", ck.server.head);
  return c;
}

inline void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck) {
  write_container(path, to_container(ck));
}

inline Checkpoint from_container(Container c, const std::string &source = "checkpoint") {
  if (c.kind != "model") throw format_error(source + ": container kind '" + c.kind + "' is not a model");
  Checkpoint ck;
  int end_layer = 0, first_layer = 0;
  try {
    ck.spec = spec_from_json(c.meta.at("spec"));
    ck.seed = c.meta.at("seed").get<std::uint64_t>();
    end_layer = c.meta.at("end_layer").get<int>();
    first_layer = c.meta.at("server_first_layer").get<int>();
    ck.meta = c.meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception &e) {
    throw format_error(source + ": bad metadata: " + e.what());
  } catch (const config_error &e) {
    throw format_error(source + ": " + e.what());
  }
  const int L = ck.spec.depth();
  if (end_layer < 1 || end_layer > L || first_layer < 1 || first_layer > end_layer + 1)
    throw format_error(source + ": inconsistent end_layer / server_first_layer");
  // Rebuild the structure, then overwrite every value from the file.
  const auto base = build_base(ck.spec, ck.seed);
  ck.client = split(base, end_layer).first;
  ck.server = split(base, first_layer - 1).second;
  for (auto &ls : ck.client.layers) detail::take_layers(c, "client/", ls, source);
  detail::take_layers(c, "client/", ck.client.head, source);
  for (auto &ls : ck.server.layers) detail::take_layers(c, "server/", ls, source);
  detail::take_layers(c, "server/", ck.server.head, source);
  if (!c.tensors.empty()) throw format_error(source + ": unexpected tensor " + c.tensors.begin()->first);
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
  return from_container(read_container(path), path.string());
}

} // namespace splitee::model
