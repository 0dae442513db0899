#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsl/common.hpp"
#include "hsl/tensor.hpp"

namespace hsl {

// Binary 2-D mask, one byte per pixel (0 or 1), row-major. Converts
// losslessly to and from {0,255} 8-bit grayscale.
struct LabelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  LabelMask() = default;
  LabelMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {
    if (w <= 0 || h <= 0) throw ShapeError("LabelMask: dimensions must be positive");
  }

  static LabelMask from_bytes(int w, int h, const std::vector<std::uint8_t>& gray) {
    LabelMask m(w, h);
    if (gray.size() != m.bits.size())
      throw ShapeError("LabelMask::from_bytes: payload size mismatch");
    for (std::size_t i = 0; i < gray.size(); ++i) {
      if (gray[i] != 0 && gray[i] != 255)
        throw ParseError("LabelMask::from_bytes: illegal value " + std::to_string(gray[i]) +
                         " at pixel " + std::to_string(i));
      m.bits[i] = gray[i] ? 1 : 0;
    }
    return m;
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) out[i] = bits[i] ? 255 : 0;
    return out;
  }

  bool get(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }

  long long count_true() const {
    long long n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
  }
  bool any() const { return count_true() > 0; }
  bool same_dims(const LabelMask& o) const { return width == o.width && height == o.height; }
};

// One connected region of true pixels.
struct Component {
  std::vector<int> support;  // flat pixel indices, ascending
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  int area() const { return static_cast<int>(support.size()); }
};

// Connected-component decomposition of a mask; components are ordered by
// their smallest pixel index.
struct LesionSet {
  int width = 0;
  int height = 0;
  int connectivity = 8;
  std::vector<Component> components;

  int count() const { return static_cast<int>(components.size()); }
};

LesionSet label_components(const LabelMask& mask, int connectivity = 8);

struct MatchRule {
  // A lesion counts as matched when its overlap with the other side's union
  // reaches max(1, ceil(min_overlap_ratio * lesion area)) pixels.
  double min_overlap_ratio = 0.0;
};

struct MatchPair {
  int truth_index = 0;
  int pred_index = 0;
  int overlap = 0;  // pixels
};

struct MatchResult {
  int n_true = 0;
  int n_pred = 0;
  int n_matched_true = 0;  // true lesions hit by any prediction
  int n_matched_pred = 0;  // predicted lesions hitting any true lesion
  std::vector<MatchPair> pairs;
};

MatchResult match_lesions(const LesionSet& truth, const LesionSet& pred,
                          const MatchRule& rule = {});

// Hard prediction from a probability map; the threshold comparison is
// inclusive (value >= threshold sets the bit).
template <typename T>
LabelMask binarize(const TensorT<T>& probabilities, double threshold) {
  if (probabilities.rank() != 2)
    throw ShapeError("binarize: expected [H,W] tensor, got " + shape_str(probabilities.shape()));
  if (threshold < 0.0 || threshold > 1.0)
    throw ConfigError("binarize: threshold must lie in [0,1]");
  const int H = probabilities.dim(0), W = probabilities.dim(1);
  LabelMask m(W, H);
  const auto& v = probabilities.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double p = static_cast<double>(v[i]);
    if (!(p >= 0.0 && p <= 1.0))
      throw ContractError("binarize: probability " + std::to_string(p) + " outside [0,1] at index " +
                          std::to_string(i));
    m.bits[i] = p >= threshold ? 1 : 0;
  }
  return m;
}

}  // namespace hsl
