#pragma once

#include <string>

#include "hsl/mask.hpp"
#include "hsl/tensor.hpp"

namespace hsl {

enum class FocalArgMode {
  kScore,  // wrap the complement 1 - loss (default; zero loss stays zero)
  kRaw,    // wrap the loss value itself
};

// Hyperparameters shared by the compound loss family.
struct LossConfig {
  double alpha = 0.5;      // lesion-level weight
  double beta = 0.5;       // precision weight inside each level
  double k = 1.0;          // focal scale
  double gamma = 2.0;      // focal exponent
  double c = 1.0;          // smoothing constant
  double threshold = 0.5;  // binarization threshold for hard predictions
  int connectivity = 8;
  double match_rho = 0.0;  // minimum overlap ratio for lesion matching
  FocalArgMode focal_arg_mode = FocalArgMode::kScore;

  void validate() const {
    if (alpha < 0 || alpha > 1) throw ConfigError("loss: alpha must lie in [0,1]");
    if (beta < 0 || beta > 1) throw ConfigError("loss: beta must lie in [0,1]");
    if (threshold < 0 || threshold > 1) throw ConfigError("loss: threshold must lie in [0,1]");
    if (c <= 0) throw ConfigError("loss: c must be positive");
    if (k <= 0) throw ConfigError("loss: k must be positive");
    if (gamma < 0) throw ConfigError("loss: gamma must be non-negative");
    if (connectivity != 4 && connectivity != 8)
      throw ConfigError("loss: connectivity must be 4 or 8");
    if (match_rho < 0 || match_rho > 1) throw ConfigError("loss: match_rho must lie in [0,1]");
  }
};

namespace detail {

template <typename T>
void require_logits_match(const TensorT<T>& logits, const LabelMask& truth, const char* op) {
  if (logits.rank() != 2)
    throw ShapeError(std::string(op) + ": logits must be [H,W], got " + shape_str(logits.shape()));
  if (logits.dim(0) != truth.height || logits.dim(1) != truth.width) {
    throw ShapeError(std::string(op) + ": logits " + shape_str(logits.shape()) + " vs mask " +
                     std::to_string(truth.height) + "x" + std::to_string(truth.width));
  }
}

}  // namespace detail

// Mean binary cross entropy on logits. Uses the identity
// -[y ln s + (1-y) ln(1-s)] = softplus(z) - y*z, which never overflows.
template <typename T>
TensorT<T> bce_with_logits(const TensorT<T>& logits, const LabelMask& truth) {
  detail::require_logits_match(logits, truth, "bce_with_logits");
  auto per_pixel = sub(reduce_sum(softplus(logits)), masked_sum(logits, truth.bits));
  return mul_scalar(per_pixel, 1.0 / static_cast<double>(logits.numel()));
}

// Soft Dice complement: 1 - (2*|T x s| + c) / (|T| + |s| + c), with
// |T x s| = sum(y*s), |s| = sum(s), |T| hard.
template <typename T>
TensorT<T> dice_loss(const TensorT<T>& logits, const LabelMask& truth, double c) {
  detail::require_logits_match(logits, truth, "dice_loss");
  if (c < 0) throw ConfigError("dice_loss: c must be non-negative");
  auto s = sigmoid(logits);
  auto inter = masked_sum(s, truth.bits);
  auto psum = reduce_sum(s);
  const double tsum = static_cast<double>(truth.count_true());
  auto num = add_scalar(mul_scalar(inter, 2.0), c);
  auto den = add_scalar(psum, tsum + c);
  return sub_from_scalar(1.0, div(num, den));
}

// Soft IoU complement: 1 - (|T x s| + c) / (|T| + |s| - |T x s| + c).
template <typename T>
TensorT<T> iou_loss(const TensorT<T>& logits, const LabelMask& truth, double c) {
  detail::require_logits_match(logits, truth, "iou_loss");
  if (c < 0) throw ConfigError("iou_loss: c must be non-negative");
  auto s = sigmoid(logits);
  auto inter = masked_sum(s, truth.bits);
  auto psum = reduce_sum(s);
  const double tsum = static_cast<double>(truth.count_true());
  auto num = add_scalar(inter, c);
  auto den = add_scalar(sub(psum, inter), tsum + c);
  return sub_from_scalar(1.0, div(num, den));
}

// -k * (1-x)^gamma * log(x); x is clamped below at 1e-7 before the log.
template <typename T>
TensorT<T> focal_wrap(const TensorT<T>& x, double k, double gamma) {
  if (x.numel() != 1) throw ContractError("focal_wrap: input must be scalar");
  if (k <= 0) throw ConfigError("focal_wrap: k must be positive");
  if (gamma < 0) throw ConfigError("focal_wrap: gamma must be non-negative");
  auto xc = clamp_min(x, 1e-7);
  auto weight = pow_scalar(sub_from_scalar(1.0, xc), gamma);
  return mul_scalar(mul(weight, neg(log_op(xc))), k);
}

// The focal-wrapped IoU baseline: the focal transform applied to the IoU
// score so a perfect prediction yields zero loss.
template <typename T>
TensorT<T> focal_iou_loss(const TensorT<T>& logits, const LabelMask& truth,
                          const LossConfig& cfg) {
  auto score = sub_from_scalar(1.0, iou_loss(logits, truth, cfg.c));
  return focal_wrap(score, cfg.k, cfg.gamma);
}

// Pixel-level loss: beta * (1 - (I+c)/(|s|+c)) + (1-beta) * (1 - (I+c)/(|T|+c))
// with soft intersection I = sum(y*s) and hard |T|.
template <typename T>
TensorT<T> pixel_loss(const TensorT<T>& logits, const LabelMask& truth, const LossConfig& cfg) {
  detail::require_logits_match(logits, truth, "pixel_loss");
  auto s = sigmoid(logits);
  auto inter = masked_sum(s, truth.bits);
  auto psum = reduce_sum(s);
  const double tsum = static_cast<double>(truth.count_true());
  const double c = cfg.c;
  auto num = add_scalar(inter, c);
  auto prec = sub_from_scalar(1.0, div(num, add_scalar(psum, c)));
  auto rec = sub_from_scalar(1.0, mul_scalar(num, 1.0 / (tsum + c)));
  return add(mul_scalar(prec, cfg.beta), mul_scalar(rec, 1.0 - cfg.beta));
}

// Differentiable relaxation of the lesion-count loss. Component structure is
// taken from the binarized prediction and the truth and held constant for
// the step; gradients flow only through the probability values.
//   soft matched-true  = sum over true components of max sigma inside it
//   soft matched-pred  = sum over predicted components of max (y * sigma)
// Recall divides by the hard true-lesion count, precision by the hard
// predicted-lesion count, both smoothed by c and weighted by beta.
template <typename T>
TensorT<T> lesion_loss_soft(const TensorT<T>& logits, const LabelMask& truth,
                            const LossConfig& cfg) {
  detail::require_logits_match(logits, truth, "lesion_loss_soft");
  auto s = sigmoid(logits);
  const LabelMask pred_mask = binarize(s, cfg.threshold);
  const LesionSet true_set = label_components(truth, cfg.connectivity);
  const LesionSet pred_set = label_components(pred_mask, cfg.connectivity);
  const double c = cfg.c;

  TensorT<T> rec_term;
  if (true_set.count() == 0) {
    rec_term = TensorT<T>::scalar(T(0));  // 1 - c/c
  } else {
    TensorT<T> soft_mt;
    for (const auto& comp : true_set.components) {
      auto m = select_max(s, comp.support);
      soft_mt = soft_mt.defined() ? add(soft_mt, m) : m;
    }
    rec_term = sub_from_scalar(
        1.0, mul_scalar(add_scalar(soft_mt, c), 1.0 / (static_cast<double>(true_set.count()) + c)));
  }

  TensorT<T> prec_term;
  if (pred_set.count() == 0) {
    prec_term = TensorT<T>::scalar(T(0));
  } else {
    auto ys = masked_values(s, truth.bits);
    TensorT<T> soft_mp;
    for (const auto& comp : pred_set.components) {
      auto m = select_max(ys, comp.support);
      soft_mp = soft_mp.defined() ? add(soft_mp, m) : m;
    }
    prec_term = sub_from_scalar(
        1.0, mul_scalar(add_scalar(soft_mp, c), 1.0 / (static_cast<double>(pred_set.count()) + c)));
  }

  return add(mul_scalar(prec_term, cfg.beta), mul_scalar(rec_term, 1.0 - cfg.beta));
}

// Compound loss: the focal wrapper around
//   L = alpha * lesion_loss_soft + (1-alpha) * pixel_loss.
// Score mode wraps 1 - L (monotone increasing in L, zero at L = 0); raw mode
// wraps L itself.
template <typename T>
TensorT<T> compound_loss(const TensorT<T>& logits, const LabelMask& truth,
                         const LossConfig& cfg) {
  detail::require_logits_match(logits, truth, "compound_loss");
  TensorT<T> combined;
  if (cfg.alpha == 0.0) {
    combined = pixel_loss(logits, truth, cfg);
  } else if (cfg.alpha == 1.0) {
    combined = lesion_loss_soft(logits, truth, cfg);
  } else {
    combined = add(mul_scalar(lesion_loss_soft(logits, truth, cfg), cfg.alpha),
                   mul_scalar(pixel_loss(logits, truth, cfg), 1.0 - cfg.alpha));
  }
  if (cfg.focal_arg_mode == FocalArgMode::kScore)
    return focal_wrap(sub_from_scalar(1.0, combined), cfg.k, cfg.gamma);
  return focal_wrap(combined, cfg.k, cfg.gamma);
}

}  // namespace hsl
