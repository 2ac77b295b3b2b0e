#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fcos/losses.hpp"
#include "fcos/random.hpp"

namespace fcos {

inline constexpr double kGradTol = 1e-5;

struct KernelCheck {
  std::string kernel;
  int points = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<KernelCheck> kernels;
  double tolerance = kGradTol;
  bool all_pass = false;
};

namespace detail {

inline double grad_rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) /
         std::max({std::abs(analytic), std::abs(fd), 1e-2});
}

// Central difference of a scalar function with a magnitude-scaled step.
template <class F>
double fd_central(F&& f, double x) {
  const double h = 1e-6 * std::max(1.0, std::abs(x));
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Draws side distances away from the min/max tie kinks of the paired point.
inline double sample_away_from(Rng& rng, double other) {
  for (;;) {
    const double v = rng.uniform(0.5, 300.0);
    if (std::abs(v - other) > 1e-2) return v;
  }
}

}  // namespace detail

// corrupt scales the returned analytic gradient; 1.0 checks the real thing.
inline KernelCheck check_focal(std::uint64_t seed, int points,
                               double corrupt = 1.0) {
  Rng rng(seed);
  KernelCheck r{"focal", points, 0.0, false};
  for (int i = 0; i < points; ++i) {
    FocalParams fp;
    const int mode = i % 3;
    if (mode == 0) fp.gamma = 2.0;
    if (mode == 1) fp.gamma = 0.0;
    if (mode == 2) fp.gamma = rng.uniform(0.5, 4.0);
    fp.alpha = rng.uniform(0.05, 0.95);
    const bool positive = i % 2 == 0;
    const double p = rng.uniform(0.05, 0.95);
    const double analytic = focal_loss(p, positive, fp).grad * corrupt;
    const double fd = detail::fd_central(
        [&](double q) { return focal_loss(q, positive, fp).value; }, p);
    r.max_rel_err = std::max(r.max_rel_err, detail::grad_rel_err(analytic, fd));
  }
  r.pass = r.max_rel_err <= kGradTol;
  return r;
}

enum class RegCorruption { kNone, kScaled, kDropUnionTerm };

inline KernelCheck check_iou_loss(std::uint64_t seed, int points,
                                  RegCorruption corrupt = RegCorruption::kNone) {
  Rng rng(seed);
  KernelCheck r{"iou_loss", points, 0.0, false};
  for (int i = 0; i < points; ++i) {
    Ltrb tgt{rng.uniform(0.5, 300.0), rng.uniform(0.5, 300.0),
             rng.uniform(0.5, 300.0), rng.uniform(0.5, 300.0)};
    Ltrb pred{detail::sample_away_from(rng, tgt.l),
              detail::sample_away_from(rng, tgt.t),
              detail::sample_away_from(rng, tgt.r),
              detail::sample_away_from(rng, tgt.b)};
    const RegLossResult res = iou_loss(pred, tgt);
    double* comps[4] = {&pred.l, &pred.t, &pred.r, &pred.b};
    for (int k = 0; k < 4; ++k) {
      double analytic = res.grad[static_cast<std::size_t>(k)];
      if (corrupt == RegCorruption::kScaled) analytic *= 1.05;
      if (corrupt == RegCorruption::kDropUnionTerm) {
        const double iw = std::min(pred.l, tgt.l) + std::min(pred.r, tgt.r);
        const double ih = std::min(pred.t, tgt.t) + std::min(pred.b, tgt.b);
        const double inter = iw * ih;
        const double d_inter =
            k == 0 ? (pred.l < tgt.l ? ih : 0.0)
            : k == 1 ? (pred.t < tgt.t ? iw : 0.0)
            : k == 2 ? (pred.r < tgt.r ? ih : 0.0)
                     : (pred.b < tgt.b ? iw : 0.0);
        analytic = -d_inter / inter;
      }
      const double saved = *comps[k];
      const double fd = detail::fd_central(
          [&](double v) {
            *comps[k] = v;
            const double out = iou_loss(pred, tgt).value;
            *comps[k] = saved;
            return out;
          },
          saved);
      r.max_rel_err =
          std::max(r.max_rel_err, detail::grad_rel_err(analytic, fd));
    }
  }
  r.pass = r.max_rel_err <= kGradTol;
  return r;
}

inline KernelCheck check_giou_penalty(std::uint64_t seed, int points) {
  Rng rng(seed);
  KernelCheck r{"giou_penalty", points, 0.0, false};
  for (int i = 0; i < points; ++i) {
    Ltrb tgt{rng.uniform(0.5, 300.0), rng.uniform(0.5, 300.0),
             rng.uniform(0.5, 300.0), rng.uniform(0.5, 300.0)};
    Ltrb pred{detail::sample_away_from(rng, tgt.l),
              detail::sample_away_from(rng, tgt.t),
              detail::sample_away_from(rng, tgt.r),
              detail::sample_away_from(rng, tgt.b)};
    const RegLossResult res = giou_penalty(pred, tgt);
    double* comps[4] = {&pred.l, &pred.t, &pred.r, &pred.b};
    for (int k = 0; k < 4; ++k) {
      const double saved = *comps[k];
      const double fd = detail::fd_central(
          [&](double v) {
            *comps[k] = v;
            const double out = giou_penalty(pred, tgt).value;
            *comps[k] = saved;
            return out;
          },
          saved);
      r.max_rel_err = std::max(
          r.max_rel_err,
          detail::grad_rel_err(res.grad[static_cast<std::size_t>(k)], fd));
    }
  }
  r.pass = r.max_rel_err <= kGradTol;
  return r;
}

inline KernelCheck check_centerness_bce(std::uint64_t seed, int points) {
  Rng rng(seed);
  KernelCheck r{"centerness_bce", points, 0.0, false};
  for (int i = 0; i < points; ++i) {
    const double t = rng.uniform(0.0, 1.0);
    const double p = rng.uniform(0.05, 0.95);
    const double analytic = centerness_bce(p, t).grad;
    const double fd = detail::fd_central(
        [&](double q) { return centerness_bce(q, t).value; }, p);
    r.max_rel_err = std::max(r.max_rel_err, detail::grad_rel_err(analytic, fd));
  }
  r.pass = r.max_rel_err <= kGradTol;
  return r;
}

// End-to-end check of the batched objective: every input slot of a small
// random batch is perturbed and compared against the filled gradient bundle.
inline KernelCheck check_total_loss(std::uint64_t seed, int points) {
  Rng rng(seed);
  KernelCheck r{"total_loss", points, 0.0, false};
  int done = 0;
  while (done < points) {
    const int batch = 6;
    const int num_classes = 2;
    std::vector<LocationPrediction> preds(batch);
    std::vector<LocationTarget> targets(batch);
    for (int i = 0; i < batch; ++i) {
      preds[static_cast<std::size_t>(i)].class_probs = {
          rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
      targets[static_cast<std::size_t>(i)].class_label =
          i % 2 == 0 ? rng.uniform_int(1, num_classes) : 0;
      if (targets[static_cast<std::size_t>(i)].class_label > 0) {
        Ltrb tgt{rng.uniform(0.5, 200.0), rng.uniform(0.5, 200.0),
                 rng.uniform(0.5, 200.0), rng.uniform(0.5, 200.0)};
        targets[static_cast<std::size_t>(i)].regression = tgt;
        targets[static_cast<std::size_t>(i)].centerness = rng.uniform(0.1, 0.9);
        preds[static_cast<std::size_t>(i)].regression = {
            detail::sample_away_from(rng, tgt.l),
            detail::sample_away_from(rng, tgt.t),
            detail::sample_away_from(rng, tgt.r),
            detail::sample_away_from(rng, tgt.b)};
        preds[static_cast<std::size_t>(i)].centerness = rng.uniform(0.05, 0.95);
      }
    }
    LossOptions opt;
    opt.lambda = rng.uniform(0.5, 2.0);
    opt.use_giou = done % 2 == 0;
    std::vector<LocationGradients> grads;
    total_loss(preds, targets, opt, &grads);

    const auto value_at = [&]() { return total_loss(preds, targets, opt).total; };
    for (int i = 0; i < batch && done < points; ++i) {
      auto& pred = preds[static_cast<std::size_t>(i)];
      for (int c = 0; c < num_classes && done < points; ++c) {
        const double fd = detail::fd_central(
            [&](double v) {
              const double saved = pred.class_probs[static_cast<std::size_t>(c)];
              pred.class_probs[static_cast<std::size_t>(c)] = v;
              const double out = value_at();
              pred.class_probs[static_cast<std::size_t>(c)] = saved;
              return out;
            },
            pred.class_probs[static_cast<std::size_t>(c)]);
        r.max_rel_err = std::max(
            r.max_rel_err,
            detail::grad_rel_err(
                grads[static_cast<std::size_t>(i)]
                    .class_probs[static_cast<std::size_t>(c)],
                fd));
        ++done;
      }
      if (targets[static_cast<std::size_t>(i)].class_label > 0) {
        double* comps[4] = {&pred.regression.l, &pred.regression.t,
                            &pred.regression.r, &pred.regression.b};
        for (int k = 0; k < 4 && done < points; ++k) {
          const double fd = detail::fd_central(
              [&](double v) {
                const double saved = *comps[k];
                *comps[k] = v;
                const double out = value_at();
                *comps[k] = saved;
                return out;
              },
              *comps[k]);
          r.max_rel_err = std::max(
              r.max_rel_err,
              detail::grad_rel_err(grads[static_cast<std::size_t>(i)]
                                       .regression[static_cast<std::size_t>(k)],
                                   fd));
          ++done;
        }
        if (done < points) {
          const double fd = detail::fd_central(
              [&](double v) {
                const double saved = pred.centerness;
                pred.centerness = v;
                const double out = value_at();
                pred.centerness = saved;
                return out;
              },
              pred.centerness);
          r.max_rel_err = std::max(
              r.max_rel_err,
              detail::grad_rel_err(
                  grads[static_cast<std::size_t>(i)].centerness, fd));
          ++done;
        }
      }
    }
  }
  r.points = done;
  r.pass = r.max_rel_err <= kGradTol;
  return r;
}

inline GradCheckReport run_gradient_checks(std::uint64_t seed,
                                           int points_per_kernel = 1000) {
  GradCheckReport rep;
  rep.kernels.push_back(check_focal(seed, points_per_kernel));
  rep.kernels.push_back(check_iou_loss(seed + 1, points_per_kernel));
  rep.kernels.push_back(check_giou_penalty(seed + 2, points_per_kernel));
  rep.kernels.push_back(check_centerness_bce(seed + 3, points_per_kernel));
  rep.kernels.push_back(check_total_loss(seed + 4, points_per_kernel));
  rep.all_pass = true;
  for (const auto& k : rep.kernels) rep.all_pass = rep.all_pass && k.pass;
  return rep;
}

// The harness must reject deliberately wrong gradients: a 5% scale error on
// the focal gradient and a dropped union term in the IoU gradient.
inline bool corrupted_gradients_detected(std::uint64_t seed,
                                         int points = 200) {
  const KernelCheck scaled = check_focal(seed, points, 1.05);
  const KernelCheck dropped =
      check_iou_loss(seed + 1, points, RegCorruption::kDropUnionTerm);
  return !scaled.pass && !dropped.pass;
}

}  // namespace fcos
