#include "hsl/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace hsl {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];  // path halving
      a = parent[a];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Attach the larger root to the smaller so roots stay at the smallest
    // pixel index, which fixes component ordering.
    if (a < b)
      parent[b] = a;
    else
      parent[a] = b;
  }
};

}  // namespace

LesionSet label_components(const LabelMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw ConfigError("label_components: connectivity must be 4 or 8");

  const int W = mask.width, H = mask.height;
  UnionFind uf(static_cast<std::size_t>(W) * H);

  // Single raster scan; each true pixel unions with its already-visited
  // neighbours (left and the up row).
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int i = y * W + x;
      if (!mask.bits[static_cast<std::size_t>(i)]) continue;
      if (x > 0 && mask.bits[static_cast<std::size_t>(i) - 1]) uf.unite(i, i - 1);
      if (y > 0) {
        const int up = i - W;
        if (mask.bits[static_cast<std::size_t>(up)]) uf.unite(i, up);
        if (connectivity == 8) {
          if (x > 0 && mask.bits[static_cast<std::size_t>(up) - 1]) uf.unite(i, up - 1);
          if (x + 1 < W && mask.bits[static_cast<std::size_t>(up) + 1]) uf.unite(i, up + 1);
        }
      }
    }
  }

  LesionSet out;
  out.width = W;
  out.height = H;
  out.connectivity = connectivity;

  std::unordered_map<int, int> root_to_comp;
  for (int i = 0; i < W * H; ++i) {
    if (!mask.bits[static_cast<std::size_t>(i)]) continue;
    const int root = uf.find(i);
    auto [it, inserted] = root_to_comp.emplace(root, out.count());
    if (inserted) out.components.emplace_back();
    Component& c = out.components[static_cast<std::size_t>(it->second)];
    const int x = i % W, y = i / W;
    if (c.support.empty()) {
      c.min_x = c.max_x = x;
      c.min_y = c.max_y = y;
    } else {
      c.min_x = std::min(c.min_x, x);
      c.max_x = std::max(c.max_x, x);
      c.min_y = std::min(c.min_y, y);
      c.max_y = std::max(c.max_y, y);
    }
    c.support.push_back(i);
  }
  return out;
}

MatchResult match_lesions(const LesionSet& truth, const LesionSet& pred,
                          const MatchRule& rule) {
  if (truth.width != pred.width || truth.height != pred.height)
    throw ContractError("match_lesions: lesion sets come from different image dimensions");
  if (rule.min_overlap_ratio < 0.0 || rule.min_overlap_ratio > 1.0)
    throw ConfigError("match_lesions: min_overlap_ratio must lie in [0,1]");

  MatchResult r;
  r.n_true = truth.count();
  r.n_pred = pred.count();

  std::vector<int> pred_label(static_cast<std::size_t>(pred.width) * pred.height, -1);
  for (int j = 0; j < pred.count(); ++j)
    for (int px : pred.components[static_cast<std::size_t>(j)].support)
      pred_label[static_cast<std::size_t>(px)] = j;

  std::vector<int> pred_overlap(static_cast<std::size_t>(r.n_pred), 0);
  std::unordered_map<long long, int> pair_overlap;

  auto needed = [&rule](int area) {
    const int k = static_cast<int>(std::ceil(rule.min_overlap_ratio * area));
    return std::max(1, k);
  };

  for (int i = 0; i < r.n_true; ++i) {
    int total = 0;
    for (int px : truth.components[static_cast<std::size_t>(i)].support) {
      const int j = pred_label[static_cast<std::size_t>(px)];
      if (j < 0) continue;
      ++total;
      ++pred_overlap[static_cast<std::size_t>(j)];
      ++pair_overlap[static_cast<long long>(i) * r.n_pred + j];
    }
    if (total >= needed(truth.components[static_cast<std::size_t>(i)].area()))
      ++r.n_matched_true;
  }
  for (int j = 0; j < r.n_pred; ++j) {
    if (pred_overlap[static_cast<std::size_t>(j)] >=
        needed(pred.components[static_cast<std::size_t>(j)].area()))
      ++r.n_matched_pred;
  }

  r.pairs.reserve(pair_overlap.size());
  for (const auto& [key, ov] : pair_overlap)
    r.pairs.push_back({static_cast<int>(key / r.n_pred), static_cast<int>(key % r.n_pred), ov});
  std::sort(r.pairs.begin(), r.pairs.end(), [](const MatchPair& a, const MatchPair& b) {
    return a.truth_index != b.truth_index ? a.truth_index < b.truth_index
                                          : a.pred_index < b.pred_index;
  });
  return r;
}

}  // namespace hsl
