#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitee/error.hpp"
#include "splitee/nn/ops.hpp"
#include "splitee/tensor.hpp"

namespace splitee::model {

/// Positive rational, e.g. 1/8 for the channel width multiplier.
struct Ratio {
  long num = 1;
  long den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  std::string str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

  /// Accepts "3", "1/8" or a decimal such as "0.125".
  static Ratio parse(const std::string &text) {
    Ratio r;
    try {
      const auto slash = text.find('/');
      if (slash != std::string::npos) {
        std::size_t a = 0, b = 0;
        r.num = std::stol(text.substr(0, slash), &a);
        r.den = std::stol(text.substr(slash + 1), &b);
        if (a != slash || b != text.size() - slash - 1) throw config_error("");
      } else if (text.find('.') != std::string::npos) {
        std::size_t a = 0;
        const double v = std::stod(text, &a);
        if (a != text.size()) throw config_error("");
        r = from_double(v);
      } else {
        std::size_t a = 0;
        r.num = std::stol(text, &a);
        if (a != text.size()) throw config_error("");
      }
    } catch (const std::exception &) {
      throw config_error("invalid ratio '" + text + "'");
    }
    if (r.num <= 0 || r.den <= 0) throw config_error("ratio must be positive, got '" + text + "'");
    return r.reduced();
  }

  static Ratio from_double(double v) {
    if (!(v > 0.0) || !std::isfinite(v)) throw config_error("ratio must be positive");
    constexpr long scale = 1L << 20;
    Ratio r{std::lround(v * scale), scale};
    if (r.num <= 0) throw config_error("ratio too small");
    return r.reduced();
  }

  Ratio reduced() const {
    const long g = std::gcd(num, den);
    return {num / g, den / g};
  }

  friend bool operator==(const Ratio &, const Ratio &) = default;
};

enum class LayerKind { stem, stage };

struct LayerSpec {
  LayerKind kind = LayerKind::stage;
  int base_channels = 64; // before channel_scale
  int stride = 1;
  int blocks = 2;     // residual blocks (stage only)
  int kernel = 3;     // stem convolution kernel
  bool max_pool = false; // stem only

  friend bool operator==(const LayerSpec &, const LayerSpec &) = default;
};

/// The main layers of the base network plus input and class geometry.
struct BaseNetworkSpec {
  std::vector<LayerSpec> layers;
  int num_classes = 10;
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  Ratio channel_scale{1, 1};

  int depth() const { return static_cast<int>(layers.size()); }

  const LayerSpec &layer(int l) const {
    if (l < 1 || l > depth()) throw config_error("layer index " + std::to_string(l) + " outside [1," + std::to_string(depth()) + "]");
    return layers[static_cast<std::size_t>(l - 1)];
  }

  /// Output channels of layer l; l = 0 is the input.
  int channels(int l) const {
    if (l == 0) return in_channels;
    const auto &ls = layer(l);
    return static_cast<int>(std::lround(ls.base_channels * channel_scale.value()));
  }

  /// Per-sample output extents (C, H, W) of layer l; l = 0 is the input.
  Shape feature_shape(int l) const {
    std::size_t h = static_cast<std::size_t>(in_height), w = static_cast<std::size_t>(in_width);
    for (int i = 1; i <= l; ++i) {
      const auto &ls = layer(i);
      if (ls.kind == LayerKind::stem) {
        const auto k = static_cast<std::size_t>(ls.kernel), s = static_cast<std::size_t>(ls.stride);
        h = nn::conv_out_extent(h, k, s, k / 2);
        w = nn::conv_out_extent(w, k, s, k / 2);
        if (ls.max_pool) {
          h = nn::conv_out_extent(h, 3, 2, 1);
          w = nn::conv_out_extent(w, 3, 2, 1);
        }
      } else {
        const auto s = static_cast<std::size_t>(ls.stride);
        h = nn::conv_out_extent(h, 3, s, 1);
        w = nn::conv_out_extent(w, 3, s, 1);
      }
    }
    return {static_cast<std::size_t>(channels(l)), h, w};
  }

  Shape input_shape() const {
    return {static_cast<std::size_t>(in_channels), static_cast<std::size_t>(in_height), static_cast<std::size_t>(in_width)};
  }

  void validate() const {
    if (depth() < 2) throw config_error("network needs at least 2 layers, got " + std::to_string(depth()));
    if (num_classes < 2) throw config_error("num_classes must be at least 2");
    if (in_channels < 1 || in_height < 1 || in_width < 1) throw config_error("input extents must be positive");
    if (channel_scale.num <= 0 || channel_scale.den <= 0) throw config_error("channel_scale must be positive");
    for (int l = 1; l <= depth(); ++l) {
      const auto &ls = layer(l);
      if ((ls.kind == LayerKind::stem) != (l == 1)) throw config_error("layer 1 must be the stem and only layer 1");
      if (channels(l) < 1)
        throw config_error("layer " + std::to_string(l) + " has no channels after scaling by " + channel_scale.str());
      if (ls.kind == LayerKind::stage) {
        if (ls.stride != 1 && ls.stride != 2) throw config_error("stage strides must be 1 or 2");
        if (ls.blocks < 1) throw config_error("stages need at least one block");
      } else {
        if (ls.kernel != 3 && ls.kernel != 7) throw config_error("stem kernel must be 3 or 7");
        if (ls.stride < 1) throw config_error("stem stride must be positive");
      }
    }
  }

  friend bool operator==(const BaseNetworkSpec &, const BaseNetworkSpec &) = default;
};

inline constexpr int kResNet18Depth = 6;

/// First `depth` layers of the residual-18 layout: a stem then stages of two
/// basic blocks with widths 64, 64, 128, 256, 512 and strides 1, 1, 2, 2, 2.
/// Inputs up to 32x32 get a 3x3 stride-1 stem without pooling; larger inputs
/// a 7x7 stride-2 stem followed by 3x3 stride-2 max pooling.
inline BaseNetworkSpec resnet18_spec(int depth, int num_classes, int in_channels, int in_height, int in_width,
                                     Ratio channel_scale = {1, 1}) {
  if (depth < 2 || depth > kResNet18Depth)
    throw config_error("residual-18 layout has 2 to 6 main layers, got " + std::to_string(depth));
  BaseNetworkSpec s;
  s.num_classes = num_classes;
  s.in_channels = in_channels;
  s.in_height = in_height;
  s.in_width = in_width;
  s.channel_scale = channel_scale;
  const bool small = in_height <= 32 && in_width <= 32;
  LayerSpec stem;
  stem.kind = LayerKind::stem;
  stem.base_channels = 64;
  stem.kernel = small ? 3 : 7;
  stem.stride = small ? 1 : 2;
  stem.max_pool = !small;
  stem.blocks = 0;
  s.layers.push_back(stem);
  constexpr int widths[] = {64, 64, 128, 256, 512};
  constexpr int strides[] = {1, 1, 2, 2, 2};
  for (int l = 2; l <= depth; ++l) {
    LayerSpec st;
    st.kind = LayerKind::stage;
    st.base_channels = widths[l - 2];
    st.stride = strides[l - 2];
    st.blocks = 2;
    s.layers.push_back(st);
  }
  s.validate();
  return s;
}

// JSON form, used by checkpoints and run manifests.

inline nlohmann::json to_json(const BaseNetworkSpec &s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto &l : s.layers) {
    layers.push_back({{"kind", l.kind == LayerKind::stem ? "stem" : "stage"},
                      {"base_channels", l.base_channels},
                      {"stride", l.stride},
                      {"blocks", l.blocks},
                      {"kernel", l.kernel},
                      {"max_pool", l.max_pool}});
  }
  return {{"layers", layers},
          {"num_classes", s.num_classes},
          {"input", {s.in_channels, s.in_height, s.in_width}},
          {"channel_scale", s.channel_scale.str()}};
}

inline BaseNetworkSpec spec_from_json(const nlohmann::json &j) {
  try {
    BaseNetworkSpec s;
    for (const auto &l : j.at("layers")) {
      LayerSpec ls;
      const auto kind = l.at("kind").get<std::string>();
      if (kind != "stem" && kind != "stage") throw config_error("unknown layer kind '" + kind + "'");
      ls.kind = kind == "stem" ? LayerKind::stem : LayerKind::stage;
      ls.base_channels = l.at("base_channels").get<int>();
      ls.stride = l.at("stride").get<int>();
      ls.blocks = l.at("blocks").get<int>();
      ls.kernel = l.at("kernel").get<int>();
      ls.max_pool = l.at("max_pool").get<bool>();
      s.layers.push_back(ls);
    }
    s.num_classes = j.at("num_classes").get<int>();
    const auto in = j.at("input");
    s.in_channels = in.at(0).get<int>();
    s.in_height = in.at(1).get<int>();
    s.in_width = in.at(2).get<int>();
    s.channel_scale = Ratio::parse(j.at("channel_scale").get<std::string>());
    s.validate();
    return s;
  } catch (const nlohmann::json::exception &e) {
    throw format_error(std::string("network spec: ") + e.what());
  }
}

} // namespace splitee::model
