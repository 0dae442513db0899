#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "hsl/datapipe.hpp"
#include "hsl/losses.hpp"
#include "hsl/metrics.hpp"
#include "hsl/net.hpp"

namespace hsl {

enum class LossKind { kBce, kDice, kIou, kFocalIou, kPixel, kLesion, kCompound };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kBce: return "bce";
    case LossKind::kDice: return "dice";
    case LossKind::kIou: return "iou";
    case LossKind::kFocalIou: return "focal_iou";
    case LossKind::kPixel: return "pixel";
    case LossKind::kLesion: return "lesion";
    case LossKind::kCompound: return "compound";
  }
  return "?";
}

inline LossKind loss_kind_from_name(const std::string& s) {
  if (s == "bce") return LossKind::kBce;
  if (s == "dice") return LossKind::kDice;
  if (s == "iou") return LossKind::kIou;
  if (s == "focal_iou") return LossKind::kFocalIou;
  if (s == "pixel") return LossKind::kPixel;
  if (s == "lesion") return LossKind::kLesion;
  if (s == "compound") return LossKind::kCompound;
  throw ConfigError("unknown loss '" + s + "' (bce|dice|iou|focal_iou|pixel|lesion|compound)");
}

template <typename T>
TensorT<T> apply_loss(LossKind kind, const TensorT<T>& logits, const LabelMask& truth,
                      const LossConfig& cfg) {
  switch (kind) {
    case LossKind::kBce: return bce_with_logits(logits, truth);
    case LossKind::kDice: return dice_loss(logits, truth, cfg.c);
    case LossKind::kIou: return iou_loss(logits, truth, cfg.c);
    case LossKind::kFocalIou: return focal_iou_loss(logits, truth, cfg);
    case LossKind::kPixel: return pixel_loss(logits, truth, cfg);
    case LossKind::kLesion: return lesion_loss_soft(logits, truth, cfg);
    case LossKind::kCompound: return compound_loss(logits, truth, cfg);
  }
  throw ContractError("apply_loss: bad loss kind");
}

struct TrainConfig {
  LossKind stage1_loss = LossKind::kIou;
  LossKind stage2_loss = LossKind::kCompound;  // set equal to stage1 for the control runs
  double stage1_lr = 1e-4;
  double stage2_lr = 1e-5;
  int epochs_per_stage = 15;
  int batch_size = 8;
  LossConfig loss;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment = true;
  AugmentConfig aug;

  void validate() const {
    if (stage1_lr <= 0 || stage2_lr <= 0) throw ConfigError("train: learning rates must be positive");
    if (epochs_per_stage < 1) throw ConfigError("train: epochs_per_stage must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
      throw ConfigError("train: adam betas must lie in [0,1)");
    if (adam_eps <= 0) throw ConfigError("train: adam_eps must be positive");
    loss.validate();
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamStateT {
  std::vector<std::vector<T>> m, v;
  long long t = 0;

  static AdamStateT zeros_like(const ModelParamsT<T>& params) {
    AdamStateT st;
    for (const auto& [_, p] : params.items) {
      st.m.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      st.v.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
    return st;
  }
};

// Standard Adam update with bias correction. Parameters without a recorded
// gradient are treated as zero-gradient (unchanged values, advancing state).
template <typename T>
void adam_step(ModelParamsT<T>& params, AdamStateT<T>& state, double lr, double beta1,
               double beta2, double eps) {
  if (state.m.size() != params.count() || state.v.size() != params.count())
    throw ContractError("adam_step: state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params.items[i].second;
    auto& vals = p.values_mut();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != vals.size())
      throw ContractError("adam_step: state shape mismatch for " + params.items[i].first);
    const std::vector<T>* g = p.has_grad() ? &p.grad() : nullptr;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double gj = g ? static_cast<double>((*g)[j]) : 0.0;
      m[j] = static_cast<T>(beta1 * m[j] + (1.0 - beta1) * gj);
      v[j] = static_cast<T>(beta2 * v[j] + (1.0 - beta2) * gj * gj);
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      vals[j] = static_cast<T>(vals[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Batching and evaluation
// ---------------------------------------------------------------------------

// Packs tiles into an [B,3,H,W] tensor with values scaled to [0,1].
template <typename T>
TensorT<T> batch_tensor(const std::vector<Tile>& tiles, std::size_t first, std::size_t count) {
  if (count == 0) throw ContractError("batch_tensor: empty batch");
  const int H = tiles[first].image.height, W = tiles[first].image.width;
  std::vector<T> v(count * 3 * static_cast<std::size_t>(H) * W);
  std::size_t o = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const auto& img = tiles[first + b].image;
    if (img.height != H || img.width != W)
      throw ShapeError("batch_tensor: tile dimensions disagree within batch");
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          v[o++] = static_cast<T>(img.at(x, y, ch)) / T(255);
  }
  return TensorT<T>::from_values({static_cast<int>(count), 3, H, W}, std::move(v));
}

// Evaluation-mode prediction masks for a batch of tiles.
template <typename T>
std::vector<LabelMask> predict_masks(const NetConfig& net, const ModelParamsT<T>& params,
                                     const std::vector<Tile>& tiles, double threshold,
                                     int batch_size = 8) {
  std::vector<LabelMask> out;
  out.reserve(tiles.size());
  Rng rng(0);  // dropout is inactive in evaluation mode
  for (std::size_t i = 0; i < tiles.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), tiles.size() - i);
    auto input = batch_tensor<T>(tiles, i, n);
    auto logits = forward(net, params, input, false, rng);
    for (std::size_t b = 0; b < n; ++b)
      out.push_back(binarize(sigmoid(plane(logits, static_cast<int>(b), 0)), threshold));
  }
  return out;
}

// Evaluation-mode forward over a dataset: binarize, per-tile metrics,
// micro-aggregate.
template <typename T>
MetricsReport evaluate(const NetConfig& net, const ModelParamsT<T>& params,
                       const std::vector<Tile>& tiles, const LossConfig& cfg) {
  if (tiles.empty()) throw ContractError("evaluate: empty dataset");
  const auto preds = predict_masks(net, params, tiles, cfg.threshold);
  std::vector<MetricsReport> reports;
  reports.reserve(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i)
    reports.push_back(compute_metrics(preds[i], tiles[i].mask, cfg.connectivity,
                                      MatchRule{cfg.match_rho}));
  return aggregate(reports);
}

// Fraction of pixels predicted positive across a dataset.
template <typename T>
double predicted_positive_fraction(const NetConfig& net, const ModelParamsT<T>& params,
                                   const std::vector<Tile>& tiles, double threshold) {
  if (tiles.empty()) throw ContractError("predicted_positive_fraction: empty dataset");
  const auto preds = predict_masks(net, params, tiles, threshold);
  long long pos = 0, total = 0;
  for (const auto& m : preds) {
    pos += m.count_true();
    total += static_cast<long long>(m.bits.size());
  }
  return static_cast<double>(pos) / static_cast<double>(total);
}

inline double truth_positive_fraction(const std::vector<Tile>& tiles) {
  long long pos = 0, total = 0;
  for (const auto& t : tiles) {
    pos += t.mask.count_true();
    total += static_cast<long long>(t.mask.bits.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  double train_loss = 0;
  MetricsReport validation;
};

inline std::string epoch_log_header() {
  return "stage,epoch,train_loss,pixel_iou,pixel_rec,pixel_pre,lesion_iou,lesion_rec,lesion_pre";
}

inline std::string epoch_log_row(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", r.stage,
                r.epoch, r.train_loss, r.validation.pixel_iou, r.validation.pixel_rec,
                r.validation.pixel_pre, r.validation.lesion_iou, r.validation.lesion_rec,
                r.validation.lesion_pre);
  return buf;
}

inline std::string epoch_log_csv(const std::vector<EpochRecord>& log) {
  std::string out = epoch_log_header() + "\n";
  for (const auto& r : log) out += epoch_log_row(r) + "\n";
  return out;
}

template <typename T>
struct CheckpointT {
  ModelParamsT<T> params;
  int stage = 0;
  int epoch = 0;
  MetricsReport validation;
  std::string config_hash;
};

template <typename T>
struct StageResultT {
  CheckpointT<T> best;
  std::vector<EpochRecord> log;
};

// Binds a checkpoint to the configuration that produced it.
inline std::string config_fingerprint(const NetConfig& net, const TrainConfig& train) {
  char buf[512];
  std::string rates;
  for (int r : net.dilation_rates) rates += std::to_string(r) + "/";
  std::snprintf(buf, sizeof(buf),
                "net:%d,%d,%d,%s,%g,%d|train:%s,%s,%g,%g,%d,%d,%llu,%g,%g,%g,%d|"
                "loss:%g,%g,%g,%g,%g,%g,%d,%g,%d",
                net.input_channels, net.base_width, net.depth, rates.c_str(), net.dropout_p,
                static_cast<int>(net.skip_mode), loss_kind_name(train.stage1_loss),
                loss_kind_name(train.stage2_loss), train.stage1_lr, train.stage2_lr,
                train.epochs_per_stage, train.batch_size,
                static_cast<unsigned long long>(train.seed), train.adam_beta1, train.adam_beta2,
                train.adam_eps, train.augment ? 1 : 0, train.loss.alpha, train.loss.beta,
                train.loss.k, train.loss.gamma, train.loss.c, train.loss.threshold,
                train.loss.connectivity, train.loss.match_rho,
                static_cast<int>(train.loss.focal_arg_mode));
  return to_hex(fnv1a64(buf));
}

// One training stage: per epoch, a seeded shuffle, online augmentation,
// forward, the selected loss, backward, and an Adam step per batch; after
// each epoch the validation pixel IoU decides the retained checkpoint
// (ties keep the earlier epoch).
template <typename T>
StageResultT<T> train_stage(const NetConfig& net, ModelParamsT<T> params,
                            const std::vector<Tile>& train, const std::vector<Tile>& valid,
                            LossKind loss_kind, double lr, int epochs, const TrainConfig& cfg,
                            int stage_tag, const std::string& config_hash) {
  if (train.empty()) throw ContractError("train_stage: empty training set");
  if (valid.empty()) throw ContractError("train_stage: empty validation set");

  AdamStateT<T> adam = AdamStateT<T>::zeros_like(params);
  StageResultT<T> result;
  bool have_best = false;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stage_tag), static_cast<std::uint64_t>(epoch), 0xa1));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0;
    long long loss_weight = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);

      std::vector<Tile> batch;
      batch.reserve(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        const Tile& src = train[order[start + b]];
        if (cfg.augment) {
          batch.push_back(augment_tile(src, cfg.aug,
                                       mix_seed(cfg.seed, static_cast<std::uint64_t>(stage_tag) * 1000 + static_cast<std::uint64_t>(epoch),
                                                batch_index, b)));
        } else {
          batch.push_back(src);
        }
      }

      auto input = batch_tensor<T>(batch, 0, bsz);
      Rng dropout_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stage_tag) * 7777 + static_cast<std::uint64_t>(epoch), batch_index, 0xd0));
      auto logits = forward(net, params, input, true, dropout_rng);

      TensorT<T> total;
      for (std::size_t b = 0; b < bsz; ++b) {
        auto l = apply_loss(loss_kind, plane(logits, static_cast<int>(b), 0), batch[b].mask, cfg.loss);
        total = total.defined() ? add(total, l) : l;
      }
      total = mul_scalar(total, 1.0 / static_cast<double>(bsz));

      const double loss_value = static_cast<double>(total.item());
      if (!std::isfinite(loss_value)) {
        throw TrainAbort("non-finite training loss at stage " + std::to_string(stage_tag) +
                         " epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index));
      }
      loss_sum += loss_value * static_cast<double>(bsz);
      loss_weight += static_cast<long long>(bsz);

      params.zero_grad();
      backward(total);
      adam_step(params, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }

    EpochRecord rec;
    rec.stage = stage_tag;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(loss_weight);
    rec.validation = evaluate(net, params, valid, cfg.loss);
    result.log.push_back(rec);

    if (!have_best || rec.validation.pixel_iou > result.best.validation.pixel_iou) {
      result.best.params = params.clone();
      result.best.stage = stage_tag;
      result.best.epoch = epoch;
      result.best.validation = rec.validation;
      result.best.config_hash = config_hash;
      have_best = true;
    }
  }
  return result;
}

template <typename T>
struct StagewiseResultT {
  CheckpointT<T> stage1;
  CheckpointT<T> stage2;
  std::vector<EpochRecord> log;
};

// Two-stage protocol: stage 1 trains from fresh initialization, stage 2
// resumes from the stage-1 best checkpoint at the lower learning rate with
// the second loss. Optimizer state starts fresh in each stage.
template <typename T>
StagewiseResultT<T> stagewise_train(const NetConfig& net, const TrainConfig& cfg,
                                    const std::vector<Tile>& train,
                                    const std::vector<Tile>& valid) {
  net.validate();
  cfg.validate();
  const std::string hash = config_fingerprint(net, cfg);

  auto params = build<T>(net, cfg.seed);
  auto s1 = train_stage(net, std::move(params), train, valid, cfg.stage1_loss, cfg.stage1_lr,
                        cfg.epochs_per_stage, cfg, 1, hash);

  auto s2 = train_stage(net, s1.best.params.clone(), train, valid, cfg.stage2_loss, cfg.stage2_lr,
                        cfg.epochs_per_stage, cfg, 2, hash);

  StagewiseResultT<T> out;
  out.stage1 = std::move(s1.best);
  out.stage2 = std::move(s2.best);
  out.log = std::move(s1.log);
  out.log.insert(out.log.end(), s2.log.begin(), s2.log.end());
  return out;
}

}  // namespace hsl
