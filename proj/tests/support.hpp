#pragma once

// Test-side oracles and helpers. Everything here is intentionally
// independent of the implementation paths it checks: gradients come from
// central finite differences, components from a recursive flood fill, and
// matching from pairwise set intersection.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <utility>
#include <vector>

#include "hsl/mask.hpp"
#include "hsl/tensor.hpp"

namespace testsupport {

template <typename T>
struct GradCheckDefaults;

template <>
struct GradCheckDefaults<double> {
  static constexpr double step = 1e-6;
  static constexpr double floor = 1e-6;
};

template <>
struct GradCheckDefaults<float> {
  static constexpr double step = 1e-2;
  static constexpr double floor = 1e-3;
};

// Max relative error between analytic gradients and central finite
// differences, over every entry of every leaf.
template <typename T>
double gradcheck_max_rel_err(
    const std::function<hsl::TensorT<T>(const std::vector<hsl::TensorT<T>>&)>& f,
    const std::vector<hsl::Shape>& shapes, std::vector<std::vector<T>> values,
    double step = GradCheckDefaults<T>::step, double floor = GradCheckDefaults<T>::floor) {
  auto make_leaves = [&](const std::vector<std::vector<T>>& vals) {
    std::vector<hsl::TensorT<T>> leaves;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      leaves.push_back(hsl::TensorT<T>::from_values(shapes[i], vals[i], true));
    return leaves;
  };

  auto leaves = make_leaves(values);
  auto loss = f(leaves);
  hsl::backward(loss);

  double max_err = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto& analytic = leaves[li].grad();
    for (std::size_t j = 0; j < values[li].size(); ++j) {
      auto vals = values;
      const double h = step;
      vals[li][j] = static_cast<T>(static_cast<double>(values[li][j]) + h);
      const double up = static_cast<double>(f(make_leaves(vals)).item());
      vals[li][j] = static_cast<T>(static_cast<double>(values[li][j]) - h);
      const double dn = static_cast<double>(f(make_leaves(vals)).item());
      const double numeric = (up - dn) / (2.0 * h);
      const double a = static_cast<double>(analytic[j]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

inline std::vector<double> random_values(hsl::Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline hsl::LabelMask random_mask(hsl::Rng& rng, int w, int h, double density = 0.4) {
  hsl::LabelMask m(w, h);
  for (auto& b : m.bits) b = rng.bernoulli(density) ? 1 : 0;
  return m;
}

// Recursive flood fill, the brute-force labeling oracle.
inline std::vector<std::vector<int>> flood_fill_components(const hsl::LabelMask& mask,
                                                           int connectivity) {
  const int W = mask.width, H = mask.height;
  std::vector<int> label(static_cast<std::size_t>(W) * H, -1);
  std::vector<std::vector<int>> comps;
  std::function<void(int, int, int)> fill = [&](int x, int y, int id) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    const int i = y * W + x;
    if (label[static_cast<std::size_t>(i)] != -1 || !mask.bits[static_cast<std::size_t>(i)]) return;
    label[static_cast<std::size_t>(i)] = id;
    comps[static_cast<std::size_t>(id)].push_back(i);
    fill(x - 1, y, id);
    fill(x + 1, y, id);
    fill(x, y - 1, id);
    fill(x, y + 1, id);
    if (connectivity == 8) {
      fill(x - 1, y - 1, id);
      fill(x + 1, y - 1, id);
      fill(x - 1, y + 1, id);
      fill(x + 1, y + 1, id);
    }
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (mask.bits[static_cast<std::size_t>(y * W + x)] && label[static_cast<std::size_t>(y * W + x)] == -1) {
        comps.emplace_back();
        fill(x, y, static_cast<int>(comps.size()) - 1);
      }
  for (auto& c : comps) std::sort(c.begin(), c.end());
  // Components ordered by smallest pixel index, matching the contract.
  std::sort(comps.begin(), comps.end(),
            [](const std::vector<int>& a, const std::vector<int>& b) { return a[0] < b[0]; });
  return comps;
}

// O(n_true * n_pred) pairwise support-intersection matching oracle.
struct BruteMatch {
  int n_matched_true = 0;
  int n_matched_pred = 0;
  std::vector<std::tuple<int, int, int>> pairs;  // (ti, pj, overlap)
};

inline BruteMatch brute_force_match(const std::vector<std::vector<int>>& truth,
                                    const std::vector<std::vector<int>>& pred,
                                    double rho = 0.0) {
  BruteMatch r;
  std::vector<int> t_total(truth.size(), 0), p_total(pred.size(), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::set<int> ts(truth[i].begin(), truth[i].end());
    for (std::size_t j = 0; j < pred.size(); ++j) {
      int ov = 0;
      for (int px : pred[j])
        if (ts.count(px)) ++ov;
      if (ov > 0) r.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j), ov);
      t_total[i] += ov;
      p_total[j] += ov;
    }
  }
  auto needed = [rho](int area) { return std::max(1, static_cast<int>(std::ceil(rho * area))); };
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (t_total[i] >= needed(static_cast<int>(truth[i].size()))) ++r.n_matched_true;
  for (std::size_t j = 0; j < pred.size(); ++j)
    if (p_total[j] >= needed(static_cast<int>(pred[j].size()))) ++r.n_matched_pred;
  return r;
}

}  // namespace testsupport
