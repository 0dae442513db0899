#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hsl/common.hpp"
#include "hsl/tensor.hpp"

namespace hsl {

// Miniature encoder-decoder with a parallel dilated-convolution bridge.
// Encoder levels double the channel width and halve the resolution; the
// bridge runs one 3x3 conv per dilation rate in parallel and fuses the
// concatenated branches with a 1x1 conv; the decoder mirrors the encoder.
struct NetConfig {
  int input_channels = 3;
  int base_width = 8;
  int depth = 3;
  std::vector<int> dilation_rates = {1, 2, 4};
  double dropout_p = 0.5;
  enum class SkipMode { kConcat, kAdd } skip_mode = SkipMode::kConcat;

  int level_width(int level) const { return base_width << level; }

  void validate() const {
    if (input_channels < 1) throw ConfigError("net: input_channels must be >= 1");
    if (base_width < 1) throw ConfigError("net: base_width must be >= 1");
    if (depth < 1) throw ConfigError("net: depth must be >= 1");
    if (dilation_rates.empty()) throw ConfigError("net: dilation_rates must be non-empty");
    for (int r : dilation_rates)
      if (r < 1) throw ConfigError("net: dilation rates must be >= 1");
    if (dropout_p < 0 || dropout_p >= 1) throw ConfigError("net: dropout_p must satisfy 0 <= p < 1");
  }
};

// Named parameter collection with stable ordering (registration order, which
// the checkpoint format and the optimizer state both rely on).
template <typename T>
struct ModelParamsT {
  std::vector<std::pair<std::string, TensorT<T>>> items;

  void add(std::string name, TensorT<T> t) {
    for (const auto& [n, _] : items)
      if (n == name) throw ContractError("ModelParams: duplicate parameter name " + name);
    items.emplace_back(std::move(name), std::move(t));
  }

  TensorT<T>& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw ContractError("ModelParams: unknown parameter " + name);
  }

  const TensorT<T>& at(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw ContractError("ModelParams: unknown parameter " + name);
  }

  std::size_t count() const { return items.size(); }

  long long value_count() const {
    long long n = 0;
    for (const auto& [_, t] : items) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items) t.zero_grad();
  }

  // Deep copy into fresh leaves (checkpoints snapshot through this).
  ModelParamsT clone() const {
    ModelParamsT out;
    for (const auto& [n, t] : items)
      out.items.emplace_back(n, TensorT<T>::from_values(t.shape(), t.values(), t.requires_grad()));
    return out;
  }

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    for (const auto& [n, t] : items) {
      std::vector<U> v(t.values().begin(), t.values().end());
      out.items.emplace_back(n, TensorT<U>::from_values(t.shape(), std::move(v), t.requires_grad()));
    }
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

namespace detail {

// He-style uniform bound on the fan-in.
template <typename T>
TensorT<T> init_conv(Rng& rng, int out_ch, int in_ch, int kh, int kw) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(in_ch) * kh * kw));
  std::vector<T> v(static_cast<std::size_t>(out_ch) * in_ch * kh * kw);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return TensorT<T>::from_values({out_ch, in_ch, kh, kw}, std::move(v), true);
}

template <typename T>
TensorT<T> init_bias(Rng& rng, int out_ch, int fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(static_cast<std::size_t>(out_ch));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return TensorT<T>::from_values({out_ch}, std::move(v), true);
}

}  // namespace detail

// Fresh parameters, deterministic per (config, seed). Kernels and biases
// both draw from the fan-in-scaled uniform; nonzero biases keep an
// untrained network off the exact relu/threshold knife edges.
template <typename T>
ModelParamsT<T> build(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x6e657462756c6464ull));
  ModelParamsT<T> p;

  auto conv = [&](const std::string& name, int out_ch, int in_ch, int kh, int kw) {
    p.add(name + ".weight", detail::init_conv<T>(rng, out_ch, in_ch, kh, kw));
    p.add(name + ".bias", detail::init_bias<T>(rng, out_ch, in_ch * kh * kw));
  };

  int ch = cfg.input_channels;
  for (int level = 0; level < cfg.depth; ++level) {
    const int w = cfg.level_width(level);
    conv("enc" + std::to_string(level) + ".conv1", w, ch, 3, 3);
    conv("enc" + std::to_string(level) + ".conv2", w, w, 3, 3);
    ch = w;
  }

  for (int r : cfg.dilation_rates)
    conv("bridge.rate" + std::to_string(r), ch, ch, 3, 3);
  conv("bridge.fuse", ch, ch * static_cast<int>(cfg.dilation_rates.size()), 1, 1);

  for (int level = cfg.depth - 1; level >= 0; --level) {
    const int w = cfg.level_width(level);
    if (cfg.skip_mode == NetConfig::SkipMode::kAdd) {
      conv("dec" + std::to_string(level) + ".lateral", w, ch, 1, 1);
      conv("dec" + std::to_string(level) + ".conv", w, w, 3, 3);
    } else {
      conv("dec" + std::to_string(level) + ".conv", w, ch + w, 3, 3);
    }
    ch = w;
  }

  conv("head", 1, ch, 1, 1);
  return p;
}

// Forward pass; returns logits [N,1,H,W] (losses apply the sigmoid). The rng
// feeds dropout and is only consumed in training mode.
template <typename T>
TensorT<T> forward(const NetConfig& cfg, const ModelParamsT<T>& params,
                   const TensorT<T>& image, bool training, Rng& rng) {
  cfg.validate();
  require_rank4(image, "forward", "image");
  if (image.dim(1) != cfg.input_channels) {
    throw ShapeError("forward: image has " + std::to_string(image.dim(1)) +
                     " channels, config expects " + std::to_string(cfg.input_channels));
  }
  const int H = image.dim(2), W = image.dim(3);
  const int div = 1 << cfg.depth;
  if (H % div != 0 || W % div != 0) {
    throw ShapeError("forward: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by 2^depth = " + std::to_string(div));
  }

  auto conv_block = [&](const TensorT<T>& x, const std::string& name, int dilation) {
    return relu(conv2d(x, params.at(name + ".weight"), params.at(name + ".bias"), 1, dilation,
                       Padding::kSame));
  };

  std::vector<TensorT<T>> skips;
  TensorT<T> x = image;
  for (int level = 0; level < cfg.depth; ++level) {
    const std::string base = "enc" + std::to_string(level);
    x = conv_block(x, base + ".conv1", 1);
    x = conv_block(x, base + ".conv2", 1);
    skips.push_back(x);
    x = avgpool2(x);
  }

  TensorT<T> merged;
  for (int r : cfg.dilation_rates) {
    auto branch = conv_block(x, "bridge.rate" + std::to_string(r), r);
    merged = merged.defined() ? concat_channels(merged, branch) : branch;
  }
  x = relu(conv2d(merged, params.at("bridge.fuse.weight"), params.at("bridge.fuse.bias"), 1, 1,
                  Padding::kSame));

  for (int level = cfg.depth - 1; level >= 0; --level) {
    const std::string base = "dec" + std::to_string(level);
    x = upsample_nearest2(x);
    if (cfg.skip_mode == NetConfig::SkipMode::kAdd) {
      auto lateral = conv2d(x, params.at(base + ".lateral.weight"), params.at(base + ".lateral.bias"),
                            1, 1, Padding::kSame);
      x = add(lateral, skips[static_cast<std::size_t>(level)]);
    } else {
      x = concat_channels(x, skips[static_cast<std::size_t>(level)]);
    }
    x = conv_block(x, base + ".conv", 1);
  }

  x = dropout(x, cfg.dropout_p, training, rng);
  return conv2d(x, params.at("head.weight"), params.at("head.bias"), 1, 1, Padding::kSame);
}

}  // namespace hsl
