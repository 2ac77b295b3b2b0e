#pragma once

#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>

#include "fcos/anchors.hpp"
#include "fcos/assignment.hpp"
#include "fcos/config.hpp"
#include "fcos/data_io.hpp"
#include "fcos/error.hpp"
#include "fcos/evaluation.hpp"
#include "fcos/gradcheck.hpp"
#include "fcos/inference.hpp"
#include "fcos/toy.hpp"

namespace fcos::cli {

namespace detail {

struct CommonOpts {
  std::string config_path = "fcos.toml";
  int threads = 1;
  std::string out_dir;
  bool no_resize = false;
  CLI::Option* config_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* out_dir_opt = nullptr;
};

inline void add_common(CLI::App* sub, CommonOpts& c) {
  c.config_opt = sub->add_option("--config", c.config_path,
                                 "Config file (default ./fcos.toml)");
  c.threads_opt =
      sub->add_option("--threads", c.threads, "Worker threads (0 = hardware)");
  c.out_dir_opt = sub->add_option("--out-dir", c.out_dir,
                                  "Output directory for generated files");
  sub->add_flag("--no-resize", c.no_resize,
                "Keep annotation coordinates unscaled");
}

// Precedence: defaults < config file < FCOS_OUT_DIR < explicit flags.
inline RunConfig resolve_config(const CommonOpts& c) {
  RunConfig cfg;
  if (c.config_opt->count() > 0) {
    cfg = load_config(c.config_path);
  } else if (std::filesystem::exists(c.config_path)) {
    cfg = load_config(c.config_path);
  }
  if (const char* env = std::getenv("FCOS_OUT_DIR"); env && *env)
    cfg.out_dir = env;
  if (c.threads_opt->count() > 0) cfg.threads = c.threads;
  if (c.out_dir_opt->count() > 0) cfg.out_dir = c.out_dir;
  if (c.no_resize) cfg.resize_enabled = false;
  cfg.validate();
  return cfg;
}

inline std::vector<ImageSample> load_samples(const std::string& path,
                                             const RunConfig& cfg) {
  Dataset ds = load_annotations(path);
  if (!cfg.resize_enabled) return std::move(ds.images);
  std::vector<ImageSample> out;
  out.reserve(ds.images.size());
  for (const ImageSample& img : ds.images)
    out.push_back(resize_sample(img, cfg.resize));
  return out;
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

inline void force_single_level(FpnConfig& fpn) {
  if (fpn.level_index("P4") < 0)
    throw ValidationError(
        "single-level mode needs a level named P4 in the configuration");
  fpn.single_level_mode = "P4";
}

}  // namespace detail

// Entry point shared by the binary and the in-process tests. Returns 0 on
// success, 1 for validation/usage failures, 2 for io and parse failures.
inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"Anchor-free detection analysis toolkit"};
  app.require_subcommand(1);

  // assign
  auto* assign_cmd =
      app.add_subcommand("assign", "Dump per-location training targets");
  detail::CommonOpts assign_common;
  detail::add_common(assign_cmd, assign_common);
  std::string assign_ann;
  int assign_image_id = 0;
  bool assign_have_image = false;
  bool assign_center_sampling = false;
  bool assign_no_fpn = false;
  bool assign_normalize = false;
  assign_cmd->add_option("--annotations", assign_ann, "Annotation JSON")
      ->required();
  auto* assign_img_opt =
      assign_cmd->add_option("--image-id", assign_image_id,
                             "Image to dump (default: first image)");
  assign_cmd->add_flag("--center-sampling", assign_center_sampling,
                       "Restrict positives to box centers");
  assign_cmd->add_flag("--no-fpn", assign_no_fpn,
                       "Assign on the single P4 level");
  assign_cmd->add_flag("--normalize-targets", assign_normalize,
                       "Divide regression targets by the level stride");

  // bpr
  auto* bpr_cmd = app.add_subcommand(
      "bpr", "Best possible recall of an assignment scheme");
  detail::CommonOpts bpr_common;
  detail::add_common(bpr_cmd, bpr_common);
  std::string bpr_ann;
  std::string bpr_mode;
  bool bpr_include_crowd = false;
  bool bpr_center_sampling = false;
  bpr_cmd->add_option("--annotations", bpr_ann, "Annotation JSON")->required();
  bpr_cmd->add_option("--mode", bpr_mode,
                      "fcos | fcos-nofpn | anchors-none | anchors-low04 | "
                      "anchors-all")
      ->required()
      ->check(CLI::IsMember({"fcos", "fcos-nofpn", "anchors-none",
                             "anchors-low04", "anchors-all"}));
  bpr_cmd->add_flag("--include-crowd", bpr_include_crowd,
                    "Count crowd regions as targets");
  bpr_cmd->add_flag("--center-sampling", bpr_center_sampling,
                    "Restrict positives to box centers (fcos modes)");

  // ambiguity
  auto* amb_cmd = app.add_subcommand(
      "ambiguity", "Share of positives claimed by overlapping boxes");
  detail::CommonOpts amb_common;
  detail::add_common(amb_cmd, amb_common);
  std::string amb_ann;
  bool amb_no_fpn = false;
  bool amb_exclude_same = false;
  bool amb_include_crowd = false;
  bool amb_center_sampling = false;
  amb_cmd->add_option("--annotations", amb_ann, "Annotation JSON")->required();
  amb_cmd->add_flag("--no-fpn", amb_no_fpn, "Assign on the single P4 level");
  amb_cmd->add_flag("--exclude-same-class", amb_exclude_same,
                    "Only count overlaps between different classes");
  amb_cmd->add_flag("--include-crowd", amb_include_crowd,
                    "Let crowd regions participate");
  amb_cmd->add_flag("--center-sampling", amb_center_sampling,
                    "Restrict positives to box centers");

  // eval
  auto* eval_cmd = app.add_subcommand(
      "eval", "Precision/recall analysis of detection results");
  detail::CommonOpts eval_common;
  detail::add_common(eval_cmd, eval_common);
  std::string eval_ann;
  std::string eval_det;
  double eval_iou = 0.5;
  bool eval_agnostic = false;
  bool eval_include_crowd = false;
  int eval_max_dets = 100;
  eval_cmd->add_option("--annotations", eval_ann, "Annotation JSON")
      ->required();
  eval_cmd->add_option("--detections", eval_det, "Detection JSON")->required();
  eval_cmd->add_option("--iou", eval_iou, "Matching IoU threshold");
  eval_cmd->add_flag("--class-agnostic", eval_agnostic,
                     "Match regardless of class");
  eval_cmd->add_flag("--include-crowd", eval_include_crowd,
                     "Match against crowd regions too");
  eval_cmd->add_option("--max-dets", eval_max_dets,
                       "Per-image detection cap for average recall");

  // nms
  auto* nms_cmd =
      app.add_subcommand("nms", "Greedy suppression over saved detections");
  detail::CommonOpts nms_common;
  detail::add_common(nms_cmd, nms_common);
  std::string nms_det;
  double nms_thr = 0.6;
  bool nms_agnostic = false;
  nms_cmd->add_option("--detections", nms_det, "Detection JSON")->required();
  auto* nms_thr_opt =
      nms_cmd->add_option("--iou-thr", nms_thr,
                          "Suppression IoU threshold (default from config)");
  nms_cmd->add_flag("--class-agnostic", nms_agnostic,
                    "Suppress across classes");

  // scatter
  auto* scatter_cmd = app.add_subcommand(
      "scatter", "Score versus localization quality scatter");
  detail::CommonOpts scatter_common;
  detail::add_common(scatter_cmd, scatter_common);
  std::string scatter_ann;
  std::string scatter_det;
  bool scatter_fused = false;
  bool scatter_unfused = false;
  bool scatter_agnostic = false;
  scatter_cmd->add_option("--annotations", scatter_ann, "Annotation JSON")
      ->required();
  scatter_cmd->add_option("--detections", scatter_det, "Detection JSON")
      ->required();
  scatter_cmd->add_flag("--fused", scatter_fused,
                        "Use centerness-fused scores (default)");
  scatter_cmd->add_flag("--unfused", scatter_unfused,
                        "Use raw classification scores");
  scatter_cmd->add_flag("--class-agnostic", scatter_agnostic,
                        "Best IoU over any class");

  // traincheck
  auto* train_cmd = app.add_subcommand(
      "traincheck", "Synthetic end-to-end training sanity check");
  detail::CommonOpts train_common;
  detail::add_common(train_cmd, train_common);
  std::uint64_t train_seed = 1;
  int train_epochs = 200;
  train_cmd->add_option("--seed", train_seed, "Random seed");
  train_cmd->add_option("--epochs", train_epochs, "Training epochs");

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference audit of the loss gradients");
  detail::CommonOpts grad_common;
  detail::add_common(grad_cmd, grad_common);
  std::uint64_t grad_seed = 1;
  int grad_points = 1000;
  grad_cmd->add_option("--seed", grad_seed, "Random seed");
  grad_cmd->add_option("--points", grad_points, "Sample points per kernel");

  std::vector<const char*> argv;
  argv.push_back("fcosdet");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  assign_have_image = assign_img_opt->count() > 0;

  try {
    if (assign_cmd->parsed()) {
      const RunConfig cfg = detail::resolve_config(assign_common);
      FpnConfig fpn = cfg.fpn;
      if (assign_center_sampling) fpn.center_sampling = true;
      if (assign_normalize) fpn.normalize_targets = true;
      if (assign_no_fpn) detail::force_single_level(fpn);
      const auto samples = detail::load_samples(assign_ann, cfg);
      if (samples.empty())
        throw ValidationError("assign: annotation file has no images");
      const ImageSample* img = &samples.front();
      if (assign_have_image) {
        img = nullptr;
        for (const auto& s : samples)
          if (s.id == assign_image_id) img = &s;
        if (!img)
          throw ValidationError("assign: no image with id " +
                                std::to_string(assign_image_id));
      }
      BuildStats stats;
      const auto targets =
          build_targets(img->width, img->height, img->gts, fpn, &stats);
      long long positives = 0;
      long long ambiguous = 0;
      std::string csv =
          "level,grid_x,grid_y,image_x,image_y,class,l,t,r,b,centerness,"
          "annotation,ambiguous,cross_class\n";
      for (const auto& t : targets) {
        if (t.class_label > 0) {
          ++positives;
          if (t.is_ambiguous) ++ambiguous;
        }
        const std::string cells[] = {
            std::to_string(t.level_index),     std::to_string(t.grid_x),
            std::to_string(t.grid_y),          format_g6(t.image_x),
            format_g6(t.image_y),              std::to_string(t.class_label),
            format_g6(t.regression.l),         format_g6(t.regression.t),
            format_g6(t.regression.r),         format_g6(t.regression.b),
            format_g6(t.centerness),           std::to_string(t.source_annotation),
            std::to_string(t.is_ambiguous ? 1 : 0),
            std::to_string(t.ambiguous_cross_class ? 1 : 0)};
        csv += csv_join(cells);
      }
      const std::string path = detail::out_path(
          cfg, "targets_" + std::to_string(img->id) + ".csv");
      write_text_file(path, csv);
      out << "image=" << img->id << " locations=" << targets.size()
          << " positives=" << positives << " ambiguous=" << ambiguous
          << " skipped_zero_area=" << stats.skipped_zero_area
          << " file=" << path << "\n";
      return 0;
    }

    if (bpr_cmd->parsed()) {
      const RunConfig cfg = detail::resolve_config(bpr_common);
      const auto samples = detail::load_samples(bpr_ann, cfg);
      BprResult r;
      if (bpr_mode == "fcos" || bpr_mode == "fcos-nofpn") {
        FpnConfig fpn = cfg.fpn;
        if (bpr_center_sampling) fpn.center_sampling = true;
        if (bpr_mode == "fcos-nofpn") detail::force_single_level(fpn);
        r = fcos_bpr(samples, fpn, bpr_include_crowd, cfg.threads);
      } else {
        const MatchPolicy policy = bpr_mode == "anchors-none"
                                       ? MatchPolicy::kNone
                                   : bpr_mode == "anchors-low04"
                                       ? MatchPolicy::kLowQuality04
                                       : MatchPolicy::kAll;
        r = anchor_bpr(samples, AnchorConfig::coco_default(), policy,
                       bpr_include_crowd, cfg.threads);
      }
      out << "mode=" << bpr_mode << " bpr_pct=" << format_g6(100.0 * r.value())
          << " recalled=" << r.recalled << " total=" << r.total << "\n";
      return 0;
    }

    if (amb_cmd->parsed()) {
      const RunConfig cfg = detail::resolve_config(amb_common);
      FpnConfig fpn = cfg.fpn;
      if (amb_center_sampling) fpn.center_sampling = true;
      if (amb_no_fpn) detail::force_single_level(fpn);
      const auto samples = detail::load_samples(amb_ann, cfg);
      const AmbiguityCounts c =
          count_ambiguity(samples, fpn, amb_include_crowd, cfg.threads);
      const double ratio =
          amb_exclude_same ? c.ratio_cross_class() : c.ratio_all();
      const long long ambiguous =
          amb_exclude_same ? c.ambiguous_cross_class : c.ambiguous_all;
      out << "scope=" << (amb_exclude_same ? "cross-class" : "all")
          << " fpn=" << (amb_no_fpn ? "single" : "multi")
          << " ratio_pct=" << format_g6(100.0 * ratio)
          << " ambiguous=" << ambiguous << " positives=" << c.positives
          << " skipped_zero_area=" << c.skipped_zero_area << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const RunConfig cfg = detail::resolve_config(eval_common);
      Dataset ds = load_annotations(eval_ann);
      const auto dets = load_detections(eval_det);
      const PrCurve curve = pr_curve(dets, ds.images, eval_iou, eval_agnostic,
                                     eval_include_crowd);
      const double ap = average_precision(curve);
      const double ar = average_recall(dets, ds.images, eval_max_dets,
                                       eval_agnostic, eval_include_crowd);
      write_text_file(detail::out_path(cfg, "pr_curve.csv"),
                      pr_curve_csv(curve));
      write_text_file(detail::out_path(cfg, "pr_curve.svg"),
                      svg_pr_curve(curve));
      out << "iou=" << format_g6(eval_iou) << " ap=" << format_g6(ap)
          << " ar=" << format_g6(ar) << " detections=" << dets.size()
          << " gts=" << curve.total_gt << "\n";
      return 0;
    }

    if (nms_cmd->parsed()) {
      const RunConfig cfg = detail::resolve_config(nms_common);
      const double thr =
          nms_thr_opt->count() > 0 ? nms_thr : cfg.inference.nms_iou;
      const bool agnostic = nms_agnostic || cfg.inference.class_agnostic_nms;
      const auto dets = load_detections(nms_det);
      // suppression is per image; groups keep first-appearance order
      std::vector<int> image_order;
      std::unordered_map<int, std::vector<Detection>> groups;
      for (const Detection& d : dets) {
        auto [it, fresh] = groups.try_emplace(d.image_id);
        if (fresh) image_order.push_back(d.image_id);
        it->second.push_back(d);
      }
      std::vector<Detection> kept;
      for (const int id : image_order) {
        auto image_kept = nms(groups[id], thr, agnostic);
        kept.insert(kept.end(), image_kept.begin(), image_kept.end());
      }
      const std::string path = detail::out_path(cfg, "nms_output.json");
      save_detections(path, kept);
      out << "input=" << dets.size() << " kept=" << kept.size()
          << " file=" << path << "\n";
      return 0;
    }

    if (scatter_cmd->parsed()) {
      if (scatter_fused && scatter_unfused)
        throw ValidationError("scatter: pass at most one of --fused/--unfused");
      const bool fused = !scatter_unfused;
      const RunConfig cfg = detail::resolve_config(scatter_common);
      Dataset ds = load_annotations(scatter_ann);
      const auto dets = load_detections(scatter_det);
      const auto points =
          centerness_scatter(dets, ds.images, fused, scatter_agnostic);
      std::vector<double> xs, ys;
      for (const auto& p : points) {
        xs.push_back(p.score);
        ys.push_back(p.iou);
      }
      const double rho = spearman(xs, ys);
      write_text_file(detail::out_path(cfg, "scatter.csv"),
                      scatter_csv(points));
      write_text_file(
          detail::out_path(cfg, "scatter.svg"),
          svg_scatter(points, fused ? "score * centerness" : "score"));
      out << "mode=" << (fused ? "fused" : "unfused")
          << " points=" << points.size() << " spearman=" << format_g6(rho)
          << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const RunConfig cfg = detail::resolve_config(train_common);
      ToyConfig toy;
      toy.seed = train_seed;
      toy.epochs = train_epochs;
      toy.loss = cfg.loss;
      const TrainReport rep = train(toy);
      std::string csv = "epoch,classification,regression,centerness,total\n";
      std::vector<double> totals;
      for (std::size_t e = 0; e < rep.series.size(); ++e) {
        const LossReport& l = rep.series[e];
        totals.push_back(l.total);
        const std::string cells[] = {std::to_string(e),
                                     format_g6(l.classification),
                                     format_g6(l.regression),
                                     format_g6(l.centerness),
                                     format_g6(l.total)};
        csv += csv_join(cells);
      }
      write_text_file(detail::out_path(cfg, "train_series.csv"), csv);
      const bool monotone = smoothed_monotone_decreasing(totals, 10);
      const bool iou_ok = rep.mean_best_iou >= 0.9;
      const bool fusion_ok =
          rep.spearman_fused + 1e-9 >= rep.spearman_unfused;
      const bool ok =
          monotone && iou_ok && fusion_ok && rep.grad_check.passed;
      nlohmann::json summary;
      summary["epochs"] = rep.series.size();
      summary["final_loss"] = totals.back();
      summary["num_positives"] = rep.num_positives;
      summary["total_detections"] = rep.total_detections;
      summary["mean_best_iou"] = rep.mean_best_iou;
      summary["spearman_fused"] = rep.spearman_fused;
      summary["spearman_unfused"] = rep.spearman_unfused;
      summary["loss_monotone"] = monotone;
      summary["grad_check_points"] = rep.grad_check.points;
      summary["grad_check_max_rel_error"] = rep.grad_check.max_rel_error;
      summary["grad_check_passed"] = rep.grad_check.passed;
      summary["status"] = ok ? "ok" : "fail";
      write_text_file(detail::out_path(cfg, "train_summary.json"),
                      summary.dump(2) + "\n");
      out << "epochs=" << rep.series.size()
          << " final_loss=" << format_g6(totals.back())
          << " mean_best_iou=" << format_g6(rep.mean_best_iou)
          << " spearman_fused=" << format_g6(rep.spearman_fused)
          << " spearman_unfused=" << format_g6(rep.spearman_unfused)
          << " loss_monotone=" << (monotone ? "yes" : "no")
          << " grad_check=" << (rep.grad_check.passed ? "pass" : "fail")
          << " status=" << (ok ? "ok" : "fail") << "\n";
      return ok ? 0 : 1;
    }

    if (grad_cmd->parsed()) {
      (void)detail::resolve_config(grad_common);  // honor --config even here
      if (grad_points < 1)
        throw ValidationError("gradcheck: points must be >= 1");
      const GradCheckReport rep = run_gradient_checks(grad_seed, grad_points);
      for (const auto& k : rep.kernels)
        out << "kernel=" << k.kernel << " points=" << k.points
            << " max_rel_err=" << format_g6(k.max_rel_err)
            << " pass=" << (k.pass ? "yes" : "no") << "\n";
      const bool control = corrupted_gradients_detected(grad_seed);
      out << "negative_control=" << (control ? "detected" : "missed")
          << " tolerance=" << format_g6(rep.tolerance)
          << " status=" << (rep.all_pass && control ? "ok" : "fail") << "\n";
      return rep.all_pass && control ? 0 : 1;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace fcos::cli
