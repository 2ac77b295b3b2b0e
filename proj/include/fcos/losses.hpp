#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "fcos/assignment.hpp"
#include "fcos/error.hpp"
#include "fcos/geometry.hpp"

namespace fcos {

inline constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) {
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;

  void validate() const {
    if (gamma < 0.0) throw ValidationError("focal: gamma must be >= 0");
    if (alpha < 0.0 || alpha > 1.0)
      throw ValidationError("focal: alpha must be in [0, 1]");
  }
};

struct LossResult {
  double value = 0.0;
  double grad = 0.0;  // d value / d probability
};

// Focal binary term for one class score. Positive: -alpha*(1-p)^g*log(p);
// negative: -(1-alpha)*p^g*log(1-p). Gradient is analytic, with the g == 0
// case (plain weighted cross-entropy) handled explicitly to avoid 0^-1.
inline LossResult focal_loss(double p, bool positive, const FocalParams& fp) {
  fp.validate();
  p = clamp_prob(p);
  const double g = fp.gamma;
  LossResult r;
  if (positive) {
    const double w = std::pow(1.0 - p, g);
    r.value = -fp.alpha * w * std::log(p);
    if (g == 0.0)
      r.grad = -fp.alpha / p;
    else
      r.grad = fp.alpha * g * std::pow(1.0 - p, g - 1.0) * std::log(p) -
               fp.alpha * w / p;
  } else {
    const double w = std::pow(p, g);
    r.value = -(1.0 - fp.alpha) * w * std::log(1.0 - p);
    if (g == 0.0)
      r.grad = (1.0 - fp.alpha) / (1.0 - p);
    else
      r.grad = -(1.0 - fp.alpha) * g * std::pow(p, g - 1.0) *
                   std::log(1.0 - p) +
               (1.0 - fp.alpha) * w / (1.0 - p);
  }
  return r;
}

struct RegLossResult {
  double value = 0.0;
  std::array<double, 4> grad{0.0, 0.0, 0.0, 0.0};  // d / d(l, t, r, b)
};

namespace detail {

inline void require_positive_ltrb(const Ltrb& d, const char* what) {
  if (!(d.l > 0.0 && d.t > 0.0 && d.r > 0.0 && d.b > 0.0))
    throw ValidationError(std::string(what) +
                          ": all side distances must be > 0");
}

}  // namespace detail

// -log(IoU) between two boxes described by side distances from a shared
// point. At min ties the subgradient follows the target branch (zero).
inline RegLossResult iou_loss(const Ltrb& pred, const Ltrb& tgt) {
  detail::require_positive_ltrb(pred, "iou_loss pred");
  detail::require_positive_ltrb(tgt, "iou_loss target");
  const double iw = std::min(pred.l, tgt.l) + std::min(pred.r, tgt.r);
  const double ih = std::min(pred.t, tgt.t) + std::min(pred.b, tgt.b);
  const double inter = iw * ih;
  const double area_p = (pred.l + pred.r) * (pred.t + pred.b);
  const double area_t = (tgt.l + tgt.r) * (tgt.t + tgt.b);
  const double uni = area_p + area_t - inter;

  RegLossResult r;
  r.value = std::log(uni) - std::log(inter);

  const std::array<double, 4> d_inter{pred.l < tgt.l ? ih : 0.0,
                                      pred.t < tgt.t ? iw : 0.0,
                                      pred.r < tgt.r ? ih : 0.0,
                                      pred.b < tgt.b ? iw : 0.0};
  const std::array<double, 4> d_area{pred.t + pred.b, pred.l + pred.r,
                                     pred.t + pred.b, pred.l + pred.r};
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    r.grad[k] = d_uni / uni - d_inter[k] / inter;
  }
  return r;
}

// Enclosing-box penalty (C - U) / C added on top of the IoU loss when the
// generalized variant is enabled. At max ties the subgradient is zero.
inline RegLossResult giou_penalty(const Ltrb& pred, const Ltrb& tgt) {
  detail::require_positive_ltrb(pred, "giou_penalty pred");
  detail::require_positive_ltrb(tgt, "giou_penalty target");
  const double iw = std::min(pred.l, tgt.l) + std::min(pred.r, tgt.r);
  const double ih = std::min(pred.t, tgt.t) + std::min(pred.b, tgt.b);
  const double inter = iw * ih;
  const double area_p = (pred.l + pred.r) * (pred.t + pred.b);
  const double area_t = (tgt.l + tgt.r) * (tgt.t + tgt.b);
  const double uni = area_p + area_t - inter;
  const double cw = std::max(pred.l, tgt.l) + std::max(pred.r, tgt.r);
  const double ch = std::max(pred.t, tgt.t) + std::max(pred.b, tgt.b);
  const double enc = cw * ch;

  RegLossResult r;
  r.value = (enc - uni) / enc;

  const std::array<double, 4> d_inter{pred.l < tgt.l ? ih : 0.0,
                                      pred.t < tgt.t ? iw : 0.0,
                                      pred.r < tgt.r ? ih : 0.0,
                                      pred.b < tgt.b ? iw : 0.0};
  const std::array<double, 4> d_area{pred.t + pred.b, pred.l + pred.r,
                                     pred.t + pred.b, pred.l + pred.r};
  const std::array<double, 4> d_enc{pred.l > tgt.l ? ch : 0.0,
                                    pred.t > tgt.t ? cw : 0.0,
                                    pred.r > tgt.r ? ch : 0.0,
                                    pred.b > tgt.b ? cw : 0.0};
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    r.grad[k] = (uni * d_enc[k] - enc * d_uni) / (enc * enc);
  }
  return r;
}

// Binary cross-entropy against a soft target in [0, 1].
inline LossResult centerness_bce(double p, double target) {
  if (target < 0.0 || target > 1.0)
    throw ValidationError("centerness_bce: target must be in [0, 1]");
  p = clamp_prob(p);
  LossResult r;
  r.value = -target * std::log(p) - (1.0 - target) * std::log(1.0 - p);
  r.grad = -target / p + (1.0 - target) / (1.0 - p);
  return r;
}

// Per-location network outputs in probability / distance space. class_probs
// holds classes 1..C at indices 0..C-1.
struct LocationPrediction {
  std::vector<double> class_probs;
  Ltrb regression;
  double centerness = 0.5;
};

struct LossOptions {
  double lambda = 1.0;
  bool use_centerness = true;
  bool use_giou = false;
  FocalParams focal;
};

struct LocationGradients {
  std::vector<double> class_probs;
  std::array<double, 4> regression{0.0, 0.0, 0.0, 0.0};
  double centerness = 0.0;
};

struct LossReport {
  double total = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  double centerness = 0.0;
  long long num_positives = 0;
};

// Training objective over a batch of locations: focal classification summed
// over every location and class, IoU regression and centerness BCE summed
// over positives, all divided by max(num_positives, 1). Regression targets
// are floored at 1e-6 so border positives (a zero side distance) stay inside
// the loss domain. Optionally fills analytic per-location gradients.
inline LossReport total_loss(std::span<const LocationPrediction> preds,
                             std::span<const LocationTarget> targets,
                             const LossOptions& opt,
                             std::vector<LocationGradients>* grads = nullptr) {
  if (preds.size() != targets.size())
    throw ValidationError("total_loss: prediction/target count mismatch");
  opt.focal.validate();
  if (opt.lambda < 0.0)
    throw ValidationError("total_loss: lambda must be >= 0");

  long long num_pos = 0;
  for (const auto& t : targets)
    if (t.class_label > 0) ++num_pos;
  const double norm = static_cast<double>(std::max<long long>(num_pos, 1));

  if (grads) {
    grads->assign(preds.size(), {});
    for (std::size_t i = 0; i < preds.size(); ++i)
      (*grads)[i].class_probs.assign(preds[i].class_probs.size(), 0.0);
  }

  LossReport rep;
  rep.num_positives = num_pos;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& pred = preds[i];
    const auto& tgt = targets[i];
    const int num_classes = static_cast<int>(pred.class_probs.size());
    if (tgt.class_label > num_classes)
      throw ValidationError("total_loss: class label exceeds classifier width");

    for (int c = 1; c <= num_classes; ++c) {
      const LossResult f =
          focal_loss(pred.class_probs[c - 1], c == tgt.class_label, opt.focal);
      rep.classification += f.value / norm;
      if (grads) (*grads)[i].class_probs[c - 1] = f.grad / norm;
    }

    if (tgt.class_label > 0) {
      Ltrb floor = tgt.regression;
      floor.l = std::max(floor.l, 1e-6);
      floor.t = std::max(floor.t, 1e-6);
      floor.r = std::max(floor.r, 1e-6);
      floor.b = std::max(floor.b, 1e-6);

      RegLossResult reg = iou_loss(pred.regression, floor);
      if (opt.use_giou) {
        const RegLossResult pen = giou_penalty(pred.regression, floor);
        reg.value += pen.value;
        for (int k = 0; k < 4; ++k) reg.grad[k] += pen.grad[k];
      }
      rep.regression += opt.lambda * reg.value / norm;
      if (grads)
        for (int k = 0; k < 4; ++k)
          (*grads)[i].regression[k] = opt.lambda * reg.grad[k] / norm;

      if (opt.use_centerness) {
        const LossResult ctr = centerness_bce(pred.centerness, tgt.centerness);
        rep.centerness += ctr.value / norm;
        if (grads) (*grads)[i].centerness = ctr.grad / norm;
      }
    }
  }
  rep.total = rep.classification + rep.regression + rep.centerness;
  return rep;
}

}  // namespace fcos
