#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hsl/losses.hpp"
#include "support.hpp"

using namespace hsl;
using testsupport::gradcheck_max_rel_err;
using testsupport::random_mask;

namespace {

double sigmoid_ref(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

LabelMask mask_from_string(int w, int h, const std::string& s) {
  LabelMask m(w, h);
  REQUIRE(static_cast<int>(s.size()) == w * h);
  for (int i = 0; i < w * h; ++i) m.bits[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i)] == '1' ? 1 : 0;
  return m;
}

// Logits that saturate the prediction onto the mask.
std::vector<double> saturated_logits(const LabelMask& m, double mag = 40.0) {
  std::vector<double> v(m.bits.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.bits[i] ? mag : -mag;
  return v;
}

// Random logits kept away from the binarization boundary at zero.
std::vector<double> off_threshold_logits(Rng& rng, int n, double margin = 0.05) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& z : v) {
    z = rng.uniform(-3.0, 3.0);
    if (std::abs(z) < margin) z = z < 0 ? -margin : margin;
  }
  return v;
}

}  // namespace

TEST_CASE("bce_with_logits: zero logits give ln 2; saturated-correct vanishes") {
  auto truth = random_mask(*new Rng(1), 8, 8, 0.4);
  auto zero = TensorD::zeros({8, 8});
  CHECK(bce_with_logits(zero, truth).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto sat = TensorD::from_values({8, 8}, saturated_logits(truth));
  CHECK(bce_with_logits(sat, truth).item() < 1e-12);
}

TEST_CASE("bce_with_logits: matches direct per-pixel summation") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto truth = random_mask(rng, 8, 8, 0.5);
    std::vector<double> z(64);
    for (auto& v : z) v = rng.uniform(-6.0, 6.0);

    double expect = 0;
    for (int i = 0; i < 64; ++i) {
      const double s = sigmoid_ref(z[static_cast<std::size_t>(i)]);
      expect -= truth.bits[static_cast<std::size_t>(i)] ? std::log(s) : std::log(1.0 - s);
    }
    expect /= 64.0;

    const double got = bce_with_logits(TensorD::from_values({8, 8}, z), truth).item();
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("dice_loss: saturation and the empty-empty smoothing case") {
  auto truth = mask_from_string(8, 8, std::string(24, '1') + std::string(40, '0'));
  auto sat = TensorD::from_values({8, 8}, saturated_logits(truth));
  CHECK(dice_loss(sat, truth, 1.0).item() <= 1e-6);

  LabelMask empty(8, 8);
  auto allneg = TensorD::from_values({8, 8}, std::vector<double>(64, -40.0));
  CHECK(dice_loss(allneg, empty, 1.0).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("dice and iou: direct-evaluation oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto truth = random_mask(rng, 8, 8, 0.4);
    std::vector<double> z(64);
    for (auto& v : z) v = rng.uniform(-4.0, 4.0);

    double inter = 0, psum = 0, tsum = 0;
    for (int i = 0; i < 64; ++i) {
      const double s = sigmoid_ref(z[static_cast<std::size_t>(i)]);
      psum += s;
      if (truth.bits[static_cast<std::size_t>(i)]) {
        inter += s;
        tsum += 1;
      }
    }
    const double c = 1.0;
    const double dice_expect = 1.0 - (2 * inter + c) / (tsum + psum + c);
    const double iou_expect = 1.0 - (inter + c) / (tsum + psum - inter + c);

    auto t = TensorD::from_values({8, 8}, z);
    CHECK(dice_loss(t, truth, c).item() == doctest::Approx(dice_expect).epsilon(1e-12));
    CHECK(iou_loss(t, truth, c).item() == doctest::Approx(iou_expect).epsilon(1e-12));
  }
}

TEST_CASE("dice-iou identity: with c=0 the scores satisfy iou = dice/(2-dice)") {
  Rng rng(99);
  int tested = 0;
  while (tested < 120) {
    const auto truth = random_mask(rng, 8, 8, 0.4);
    if (!truth.any()) continue;
    std::vector<double> z(64);
    for (auto& v : z) v = rng.uniform(-4.0, 4.0);
    auto t = TensorD::from_values({8, 8}, z);
    const double dice_score = 1.0 - dice_loss(t, truth, 0.0).item();
    const double iou_score = 1.0 - iou_loss(t, truth, 0.0).item();
    CHECK(iou_score == doctest::Approx(dice_score / (2.0 - dice_score)).epsilon(1e-9));
    ++tested;
  }
}

TEST_CASE("focal_wrap: fixed points and modes") {
  CHECK(focal_wrap(TensorD::scalar(1.0), 1.0, 2.0).item() == doctest::Approx(0.0));
  CHECK(focal_wrap(TensorD::scalar(0.5), 1.0, 0.0).item() == doctest::Approx(std::log(2.0)));
  // k scales linearly.
  CHECK(focal_wrap(TensorD::scalar(0.5), 3.0, 0.0).item() == doctest::Approx(3.0 * std::log(2.0)));
  // The clamp keeps x=0 finite.
  CHECK(std::isfinite(focal_wrap(TensorD::scalar(0.0), 1.0, 2.0).item()));

  CHECK_THROWS_AS(focal_wrap(TensorD::scalar(0.5), 0.0, 2.0), ConfigError);
  CHECK_THROWS_AS(focal_wrap(TensorD::scalar(0.5), 1.0, -1.0), ConfigError);
}

TEST_CASE("pixel_loss: saturated-perfect vanishes for any beta") {
  auto truth = random_mask(*new Rng(3), 8, 8, 0.35);
  auto sat = TensorD::from_values({8, 8}, saturated_logits(truth));
  for (double beta : {0.0, 0.3, 0.5, 0.9, 1.0}) {
    LossConfig cfg;
    cfg.beta = beta;
    CHECK(pixel_loss(sat, truth, cfg).item() <= 1e-6);
  }
}

TEST_CASE("pixel_loss: beta mixes the two soft terms exactly") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto truth = random_mask(rng, 8, 8, 0.4);
    std::vector<double> z(64);
    for (auto& v : z) v = rng.uniform(-4.0, 4.0);

    double inter = 0, psum = 0, tsum = 0;
    for (int i = 0; i < 64; ++i) {
      const double s = sigmoid_ref(z[static_cast<std::size_t>(i)]);
      psum += s;
      if (truth.bits[static_cast<std::size_t>(i)]) {
        inter += s;
        tsum += 1;
      }
    }
    const double c = 1.0;
    const double prec_term = 1.0 - (inter + c) / (psum + c);
    const double rec_term = 1.0 - (inter + c) / (tsum + c);

    auto t = TensorD::from_values({8, 8}, z);
    LossConfig cfg;
    cfg.beta = 0.5;
    CHECK(pixel_loss(t, truth, cfg).item() ==
          doctest::Approx(0.5 * (prec_term + rec_term)).epsilon(1e-12));
    cfg.beta = 0.3;
    CHECK(pixel_loss(t, truth, cfg).item() ==
          doctest::Approx(0.3 * prec_term + 0.7 * rec_term).epsilon(1e-12));
  }
}

TEST_CASE("pixel_loss: raising a true-positive probability never raises the recall term") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto truth = random_mask(rng, 6, 6, 0.4);
    if (!truth.any()) continue;
    auto z = off_threshold_logits(rng, 36);
    int tp = -1;
    for (int i = 0; i < 36; ++i)
      if (truth.bits[static_cast<std::size_t>(i)]) {
        tp = i;
        break;
      }
    LossConfig cfg;
    cfg.beta = 0.0;  // pure recall term
    const double before =
        pixel_loss(TensorD::from_values({6, 6}, z), truth, cfg).item();
    z[static_cast<std::size_t>(tp)] += 0.5;
    const double after = pixel_loss(TensorD::from_values({6, 6}, z), truth, cfg).item();
    CHECK(after <= before + 1e-12);
  }
}

TEST_CASE("lesion_loss_soft: empty-empty saturates to zero") {
  LabelMask empty(8, 8);
  auto allneg = TensorD::from_values({8, 8}, std::vector<double>(64, -40.0));
  LossConfig cfg;
  CHECK(lesion_loss_soft(allneg, empty, cfg).item() == doctest::Approx(0.0));
}

TEST_CASE("lesion_loss_soft: saturated two-blob instance matches the direct relaxation") {
  // Two well-separated blobs on a 16x16 grid.
  LabelMask truth(16, 16);
  for (int y = 2; y < 5; ++y)
    for (int x = 2; x < 5; ++x) truth.set(x, y, true);
  for (int y = 10; y < 13; ++y)
    for (int x = 10; x < 14; ++x) truth.set(x, y, true);

  auto sat = TensorD::from_values({16, 16}, saturated_logits(truth, 12.0));
  LossConfig cfg;

  // Direct evaluation of the relaxation: both soft counts approach 2.
  const double s_hi = sigmoid_ref(12.0);
  const double mt = 2 * s_hi, mp = 2 * s_hi;
  const double expect = cfg.beta * (1.0 - (mp + cfg.c) / (2 + cfg.c)) +
                        (1.0 - cfg.beta) * (1.0 - (mt + cfg.c) / (2 + cfg.c));
  CHECK(lesion_loss_soft(sat, truth, cfg).item() == doctest::Approx(expect).epsilon(1e-9));
  CHECK(lesion_loss_soft(sat, truth, cfg).item() < 1e-5);
}

TEST_CASE("lesion_loss_soft: saturated instances agree with hard MatchResult counts") {
  Rng rng(54);
  for (int trial = 0; trial < 30; ++trial) {
    // Blobby random masks, saturated predictions of a perturbed mask.
    auto truth = random_mask(rng, 16, 16, 0.15);
    auto pred = truth;
    for (int flips = 0; flips < 8; ++flips) {
      const int i = rng.uniform_int(0, 255);
      pred.bits[static_cast<std::size_t>(i)] ^= 1;
    }
    auto logits = TensorD::from_values({16, 16}, saturated_logits(pred, 9.0));
    LossConfig cfg;

    const auto ts = label_components(truth, cfg.connectivity);
    const auto ps = label_components(pred, cfg.connectivity);
    const auto mr = match_lesions(ts, ps, {cfg.match_rho});
    auto term = [&](double matched, double total) {
      return 1.0 - (matched + cfg.c) / (total + cfg.c);
    };
    const double hard = cfg.beta * term(mr.n_matched_pred, mr.n_pred) +
                        (1 - cfg.beta) * term(mr.n_matched_true, mr.n_true);
    const double soft = lesion_loss_soft(logits, truth, cfg).item();
    CHECK(std::abs(soft - hard) < 0.02);
  }
}

TEST_CASE("compound_loss: endpoints, perfection, and modes") {
  Rng rng(31);
  const auto truth = random_mask(rng, 8, 8, 0.3);
  auto z = off_threshold_logits(rng, 64);
  auto t = TensorD::from_values({8, 8}, z);

  LossConfig cfg;
  cfg.alpha = 0.0;
  CHECK(compound_loss(t, truth, cfg).item() ==
        doctest::Approx(focal_wrap(sub_from_scalar(1.0, pixel_loss(t, truth, cfg)), cfg.k, cfg.gamma).item()));
  cfg.alpha = 1.0;
  CHECK(compound_loss(t, truth, cfg).item() ==
        doctest::Approx(focal_wrap(sub_from_scalar(1.0, lesion_loss_soft(t, truth, cfg)), cfg.k, cfg.gamma).item()));

  // Perfect prediction, score mode: L -> 0 so the wrapper vanishes.
  cfg.alpha = 0.5;
  auto sat = TensorD::from_values({8, 8}, saturated_logits(truth));
  CHECK(compound_loss(sat, truth, cfg).item() < 1e-6);

  // Raw mode is the printed form: focal applied to L directly.
  cfg.focal_arg_mode = FocalArgMode::kRaw;
  const double L = 0.5 * lesion_loss_soft(t, truth, cfg).item() +
                   0.5 * pixel_loss(t, truth, cfg).item();
  const double expect_raw = -cfg.k * std::pow(1.0 - std::max(L, 1e-7), cfg.gamma) *
                            std::log(std::max(L, 1e-7));
  CHECK(compound_loss(t, truth, cfg).item() == doctest::Approx(expect_raw).epsilon(1e-9));
}

TEST_CASE("compound score mode is strictly increasing in L on a grid") {
  double prev = -1.0;
  for (int i = 1; i < 100; ++i) {
    const double L = i / 100.0;
    const double v = -1.0 * std::pow(L, 2.0) * std::log(1.0 - L);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("focal_iou_loss equals the focal wrapper on the IoU score") {
  Rng rng(8);
  const auto truth = random_mask(rng, 8, 8, 0.4);
  std::vector<double> z(64);
  for (auto& v : z) v = rng.uniform(-3.0, 3.0);
  auto t = TensorD::from_values({8, 8}, z);
  LossConfig cfg;
  const double direct =
      focal_wrap(sub_from_scalar(1.0, iou_loss(t, truth, cfg.c)), cfg.k, cfg.gamma).item();
  CHECK(focal_iou_loss(t, truth, cfg).item() == doctest::Approx(direct));

  // Perfect prediction gives zero loss.
  auto sat = TensorD::from_values({8, 8}, saturated_logits(truth));
  CHECK(focal_iou_loss(sat, truth, cfg).item() < 1e-6);
}

TEST_CASE("all seven losses are non-negative and vanish on saturated-perfect inputs") {
  Rng rng(63);
  for (int trial = 0; trial < 10; ++trial) {
    const auto truth = random_mask(rng, 8, 8, 0.3);
    auto z = off_threshold_logits(rng, 64);
    auto t = TensorD::from_values({8, 8}, z);
    auto sat = TensorD::from_values({8, 8}, saturated_logits(truth));
    LossConfig cfg;

    const double vals[7] = {bce_with_logits(t, truth).item(),
                            dice_loss(t, truth, cfg.c).item(),
                            iou_loss(t, truth, cfg.c).item(),
                            focal_iou_loss(t, truth, cfg).item(),
                            pixel_loss(t, truth, cfg).item(),
                            lesion_loss_soft(t, truth, cfg).item(),
                            compound_loss(t, truth, cfg).item()};
    for (double v : vals) CHECK(v >= 0.0);

    const double sat_vals[7] = {bce_with_logits(sat, truth).item(),
                                dice_loss(sat, truth, cfg.c).item(),
                                iou_loss(sat, truth, cfg.c).item(),
                                focal_iou_loss(sat, truth, cfg).item(),
                                pixel_loss(sat, truth, cfg).item(),
                                lesion_loss_soft(sat, truth, cfg).item(),
                                compound_loss(sat, truth, cfg).item()};
    for (double v : sat_vals) CHECK(v <= 1e-5);
  }
}

TEST_CASE("loss gradients match finite differences at f64") {
  Rng rng(2718);
  LossConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const auto truth = random_mask(rng, 8, 8, 0.35);
    const auto z = off_threshold_logits(rng, 64);

    auto check = [&](const char* name,
                     const std::function<TensorD(const TensorD&)>& loss_fn) {
      const double err = gradcheck_max_rel_err<double>(
          [&](const std::vector<TensorD>& l) { return loss_fn(l[0]); }, {{8, 8}}, {z});
      CAPTURE(name);
      CHECK(err < 1e-5);
    };

    check("bce", [&](const TensorD& t) { return bce_with_logits(t, truth); });
    check("dice", [&](const TensorD& t) { return dice_loss(t, truth, cfg.c); });
    check("iou", [&](const TensorD& t) { return iou_loss(t, truth, cfg.c); });
    check("focal_iou", [&](const TensorD& t) { return focal_iou_loss(t, truth, cfg); });
    check("lesion", [&](const TensorD& t) { return lesion_loss_soft(t, truth, cfg); });
    check("compound", [&](const TensorD& t) { return compound_loss(t, truth, cfg); });
    for (double beta : {0.0, 0.3, 0.5, 0.9}) {
      LossConfig pc = cfg;
      pc.beta = beta;
      check("pixel", [&](const TensorD& t) { return pixel_loss(t, truth, pc); });
    }
  }
}

TEST_CASE("focal_wrap gradcheck") {
  const double err = gradcheck_max_rel_err<double>(
      [](const std::vector<TensorD>& l) {
        return focal_wrap(reduce_mean(sigmoid(l[0])), 1.0, 2.0);
      },
      {{3, 3}}, {testsupport::random_values(*new Rng(5), 9)});
  CHECK(err < 1e-5);
}

TEST_CASE("loss shape mismatches raise ShapeError") {
  auto t = TensorD::zeros({4, 4});
  LabelMask m(5, 4);
  LossConfig cfg;
  CHECK_THROWS_AS(bce_with_logits(t, m), ShapeError);
  CHECK_THROWS_AS(dice_loss(t, m, 1.0), ShapeError);
  CHECK_THROWS_AS(iou_loss(t, m, 1.0), ShapeError);
  CHECK_THROWS_AS(pixel_loss(t, m, cfg), ShapeError);
  CHECK_THROWS_AS(lesion_loss_soft(t, m, cfg), ShapeError);
  CHECK_THROWS_AS(compound_loss(t, m, cfg), ShapeError);
}

TEST_CASE("LossConfig validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.alpha = 0.5;
  cfg.c = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.c = 1.0;
  cfg.connectivity = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
