#pragma once

// Experiment harness behind the CLI verbs: dataset generation, per-fold shape
// model fitting, setup-aware training with online augmentation, dual-route
// evaluation (Map from predicted distance maps, Contour from predicted shape
// and pose parameters), and report/plot emission.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shapeseg/config.hpp"
#include "shapeseg/dataset.hpp"
#include "shapeseg/evaluation.hpp"
#include "shapeseg/network.hpp"
#include "shapeseg/plot.hpp"

namespace shapeseg::harness {

namespace fs = std::filesystem;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// phantom-gen / fit-ssm

inline PhantomDataset run_phantom_gen(const std::optional<fs::path>& spec_file, int count,
                                      int folds, std::uint64_t seed, const fs::path& out_dir) {
  PhantomSpec spec;
  if (spec_file) spec = load_phantom_spec(*spec_file);
  PhantomDataset ds = generate_dataset(seed, count, spec, folds);
  save_dataset(ds, out_dir);
  return ds;
}

inline StatShapeModel run_fit_ssm(const fs::path& dataset_dir,
                                  const std::vector<int>& folds_to_use,
                                  const fs::path& out_file) {
  const PhantomDataset ds = load_dataset(dataset_dir);
  for (int f : folds_to_use) {
    if (f < 0 || f >= ds.folds)
      throw ConfigError("fit-ssm: fold " + std::to_string(f) + " out of range");
  }
  const auto shapes = normalized_shapes(ds, folds_to_use);
  if (shapes.size() < 2) throw ConfigError("fit-ssm: fewer than 2 training shapes");
  const StatShapeModel model = fit(shapes);
  save_shape_model(model, out_file);
  return model;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

inline std::vector<float> flat_maps(const LandmarkShape& shape, const GridSpec& grid) {
  const ClassMaps maps = maps_from_landmarks(shape, grid);
  std::vector<float> out;
  out.reserve(2 * maps.endo.values.size());
  out.insert(out.end(), maps.endo.values.begin(), maps.endo.values.end());
  out.insert(out.end(), maps.epi.values.begin(), maps.epi.values.end());
  return out;
}

inline std::vector<float> gt_coeffs(const PhantomSample& s, const StatShapeModel& ssm, int m) {
  const ShapeCoefficients b = project(normalize_pose(s.shape, s.pose), ssm, m);
  std::vector<float> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(b[i]);
  return out;
}

inline std::array<float, 3> gt_pose_norm(const PhantomSample& s, const GridSpec& grid) {
  const auto v = normalize_pose_params(s.pose, grid);
  return {static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])};
}

inline std::vector<Point2> all_landmarks(const LandmarkShape& s) {
  std::vector<Point2> pts = s.endo;
  pts.insert(pts.end(), s.epi.begin(), s.epi.end());
  return pts;
}

inline std::string loss_csv(double v) { return format_g17(v); }

}  // namespace detail

struct TrainArtifacts {
  fs::path run_dir;
  TrainResult result;
  StatShapeModel ssm;
};

inline nlohmann::json experiment_manifest(const ExperimentConfig& cfg, int fold,
                                          const std::string& dataset_hash_hex,
                                          const TrainResult& result) {
  const LossWeights eff = cfg.effective_weights();
  nlohmann::json j;
  j["version"] = 1;
  j["setup"] = setup_name(cfg.setup);
  j["fold"] = fold;
  j["folds"] = cfg.folds;
  j["seed"] = cfg.seed;
  j["dataset_hash"] = dataset_hash_hex;
  j["grid"] = {{"height", cfg.grid.height},
               {"width", cfg.grid.width},
               {"pixel_size", cfg.grid.pixel_size}};
  j["network"] = to_json(cfg.network);
  j["train"] = {{"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size}};
  j["weights"] = {{"gamma1", cfg.train.weights.gamma1},
                  {"gamma2", cfg.train.weights.gamma2},
                  {"gamma3", cfg.train.weights.gamma3},
                  {"mu", cfg.train.weights.mu},
                  {"alpha", cfg.train.weights.alpha}};
  j["effective_weights"] = {{"gamma1", eff.gamma1},
                            {"gamma2", eff.gamma2},
                            {"gamma3", eff.gamma3},
                            {"mu", eff.mu},
                            {"alpha", eff.alpha}};
  j["augmentation"] = {{"pose_shape", cfg.pose_shape_augmentation()},
                       {"translation", {cfg.aug.translation.lo, cfg.aug.translation.hi}},
                       {"rotation", {cfg.aug.rotation.lo, cfg.aug.rotation.hi}},
                       {"coefficient", {cfg.aug.coefficient.lo, cfg.aug.coefficient.hi}},
                       {"noise_sigma", {cfg.aug.noise_sigma.lo, cfg.aug.noise_sigma.hi}}};
  j["best_epoch"] = result.best_epoch;
  j["best_val"] = std::isfinite(result.best_val) ? result.best_val : 0.0;
  return j;
}

// Train one setup on one fold: fits the fold shape model from the remaining
// folds, prepares targets, runs the training loop and writes run artifacts.
inline TrainArtifacts run_train(const ExperimentConfig& cfg, const fs::path& dataset_dir,
                                int fold, const fs::path& out_dir, bool resume = false,
                                bool quiet = false) {
  cfg.validate();
  const PhantomDataset ds = load_dataset(dataset_dir);
  if (fold < 0 || fold >= ds.folds) throw ConfigError("train: fold out of range");
  if (ds.folds != cfg.folds)
    throw ConfigError("train: config folds do not match the dataset fold count");
  if (ds.spec.grid.height != cfg.grid.height || ds.spec.grid.width != cfg.grid.width)
    throw ConfigError("train: config grid does not match the dataset grid");

  std::vector<const PhantomSample*> train_samples, val_samples;
  for (const PhantomSample& s : ds.samples) {
    (s.fold == fold ? val_samples : train_samples).push_back(&s);
  }
  if (train_samples.size() < 2 || val_samples.empty())
    throw ConfigError("train: degenerate fold split");

  fs::create_directories(out_dir);

  // Per-fold shape model from the training folds only.
  std::vector<ShapeVector> train_shapes;
  for (const auto* s : train_samples) train_shapes.push_back(normalize_pose(s->shape, s->pose));
  const StatShapeModel ssm = fit(train_shapes);
  const int m_modes = cfg.network.shape_modes;
  if (m_modes > ssm.rank())
    throw ConfigError("train: shape_modes exceeds the fitted model rank (" +
                      std::to_string(ssm.rank()) + ")");
  save_shape_model(ssm, out_dir / "ssm.json");

  const GridSpec grid = ds.spec.grid;
  // Validation items: clean images, ground-truth targets.
  std::vector<TrainItem> val_items(val_samples.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(val_samples.size()); ++i) {
    const PhantomSample& s = *val_samples[static_cast<std::size_t>(i)];
    TrainItem& it = val_items[static_cast<std::size_t>(i)];
    it.image = s.image;
    it.coeffs = detail::gt_coeffs(s, ssm, m_modes);
    it.pose = detail::gt_pose_norm(s, grid);
    it.maps = detail::flat_maps(s.shape, grid);
  }

  // Ground-truth training targets; reused every epoch when only noise
  // augmentation is active.
  const bool ps_aug = cfg.pose_shape_augmentation();
  std::vector<TrainItem> base_items(train_samples.size());
  if (!ps_aug) {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(train_samples.size()); ++i) {
      const PhantomSample& s = *train_samples[static_cast<std::size_t>(i)];
      TrainItem& it = base_items[static_cast<std::size_t>(i)];
      it.coeffs = detail::gt_coeffs(s, ssm, m_modes);
      it.pose = detail::gt_pose_norm(s, grid);
      it.maps = detail::flat_maps(s.shape, grid);
    }
  }

  const std::uint64_t aug_salt = cfg.seed ^ 0x617567736565641ull;
  const int train_count = static_cast<int>(train_samples.size());
  ItemFn item_fn = [&, ps_aug, m_modes, train_count](int epoch, int index) -> TrainItem {
    const PhantomSample& s = *train_samples[static_cast<std::size_t>(index)];
    Rng rng = Rng::stream(aug_salt, static_cast<std::uint64_t>(epoch) *
                                        static_cast<std::uint64_t>(train_count) +
                                        static_cast<std::uint64_t>(index));
    if (!ps_aug) {
      TrainItem it = base_items[static_cast<std::size_t>(index)];
      it.image = s.image;
      const double sigma = rng.uniform(cfg.aug.noise_sigma.lo, cfg.aug.noise_sigma.hi);
      add_noise(it.image, sigma, rng);
      return it;
    }
    // Pose/shape augmentation: perturb parameters, regenerate targets from
    // the augmented landmarks, and TPS-warp the image to match.
    for (int attempt = 0;; ++attempt) {
      try {
        const AugmentSample sample = draw_valid(rng, cfg.aug, m_modes, s.pose, grid);
        const auto [shape_aug, pose_aug] = augment_shape(s.shape, s.pose, ssm, sample);
        TrainItem it;
        const ShapeCoefficients b = project(normalize_pose(shape_aug, pose_aug), ssm, m_modes);
        it.coeffs.resize(static_cast<std::size_t>(m_modes));
        for (int m = 0; m < m_modes; ++m) it.coeffs[static_cast<std::size_t>(m)] = static_cast<float>(b[m]);
        const auto pn = normalize_pose_params(pose_aug, grid);
        it.pose = {static_cast<float>(pn[0]), static_cast<float>(pn[1]),
                   static_cast<float>(pn[2])};
        it.maps = detail::flat_maps(shape_aug, grid);
        const TpsTransform tps =
            tps_fit(detail::all_landmarks(shape_aug), detail::all_landmarks(s.shape));
        it.image = warp_image(s.image, grid, tps);
        add_noise(it.image, sample.sigma, rng);
        return it;
      } catch (const std::exception&) {
        if (attempt >= 4) throw;
      }
    }
  };

  Network net(cfg.network, cfg.seed);
  AdamOptimizer adam(cfg.train.learning_rate);
  int start_epoch = 0;
  const fs::path last_path = out_dir / "last.ckpt";
  if (resume && fs::exists(last_path)) {
    const CheckpointMeta meta = restore_checkpoint(read_file(last_path), net, adam);
    start_epoch = meta.epoch + 1;
  }

  std::string history_csv;
  if (start_epoch == 0 || !fs::exists(out_dir / "history.csv")) {
    history_csv =
        "epoch,train_total,train_l1,train_l2,train_l3_dice,train_l3_mse,"
        "val_total,val_l1,val_l2,val_l3_dice,val_l3_mse,val_dsc_lv,is_best\n";
  } else {
    history_csv = read_file(out_dir / "history.csv");
  }

  const LossWeights eff = cfg.effective_weights();
  EpochCallback callback = [&](const EpochStats& st) {
    history_csv += std::to_string(st.epoch);
    for (double v : {st.train.total, st.train.l1, st.train.l2, st.train.l3_dice, st.train.l3_mse,
                     st.val.total, st.val.l1, st.val.l2, st.val.l3_dice, st.val.l3_mse,
                     st.val_dsc_lv}) {
      history_csv += "," + detail::loss_csv(v);
    }
    history_csv += st.is_best ? ",1\n" : ",0\n";
    if (!quiet && (st.epoch % 10 == 0 || st.epoch + 1 == cfg.train.epochs)) {
      std::fprintf(stderr, "[%s fold %d] epoch %d train %.4f val %.4f dsc_lv %.3f%s\n",
                   setup_name(cfg.setup).c_str(), fold, st.epoch, st.train.total, st.val.total,
                   st.val_dsc_lv, st.is_best ? " *" : "");
    }
  };

  TrainArtifacts art;
  art.run_dir = out_dir;
  art.result =
      train(net, adam, item_fn, train_count, val_items, cfg.train, eff, start_epoch, callback);
  art.ssm = ssm;

  write_file(out_dir / "history.csv", history_csv);
  CheckpointMeta meta;
  meta.config = cfg.network;
  meta.epoch = cfg.train.epochs - 1;
  meta.best_val = art.result.best_val;
  meta.setup = setup_name(cfg.setup);
  meta.fold = fold;
  meta.seed = cfg.seed;
  write_file(last_path, encode_checkpoint(net, adam, meta));
  if (!art.result.best_state.empty()) {
    write_file(out_dir / "best.ckpt", art.result.best_state);
  } else {
    write_file(out_dir / "best.ckpt", encode_checkpoint(net, adam, meta));
  }
  nlohmann::json manifest = experiment_manifest(cfg, fold, dataset_hash(ds), art.result);
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return art;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  int id = 0;
  int patient = 0;
  int fold = 0;
  std::string route;
  double dsc_lv = kNaN, dsc_myo = kNaN, mbe = kNaN, hd = kNaN;
  double dd = kNaN, dtheta = kNaN;
  ClinicalMeasures meas{kNaN, kNaN, {kNaN, kNaN, kNaN}, {kNaN, kNaN, kNaN, kNaN, kNaN, kNaN}};
  ClinicalMeasures gt{};
  int contour_components_cavity = -1;
  int contour_components_myo = -1;
};

struct EvalOutputs {
  std::vector<EvalRow> rows;
  std::vector<double> recon_gt;    // per-M curves
  std::vector<double> recon_pred;
};

namespace detail {

inline DistanceMap map_from_channel(std::span<const float> values, const GridSpec& grid) {
  DistanceMap d;
  d.grid = grid;
  d.values.assign(values.begin(), values.end());
  return d;
}

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "nan";
  return format_g17(v);
}

inline void append_measures(std::string& csv, const ClinicalMeasures& m) {
  csv += "," + csv_num(m.area_lv) + "," + csv_num(m.area_myo);
  for (double v : m.dims) csv += "," + csv_num(v);
  for (double v : m.rwt) csv += "," + csv_num(v);
}

struct Stat {
  double mean = kNaN, sd = kNaN;
  int n = 0;
};

inline Stat nan_stat(const std::vector<double>& v) {
  Stat s;
  double sum = 0.0;
  int n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  if (n == 0) return s;
  s.mean = sum / n;
  s.n = n;
  if (n > 1) {
    double sq = 0.0;
    for (double x : v) {
      if (std::isnan(x)) continue;
      sq += (x - s.mean) * (x - s.mean);
    }
    s.sd = std::sqrt(sq / (n - 1));
  } else {
    s.sd = 0.0;
  }
  return s;
}

}  // namespace detail

// Evaluate one trained run on its held-out fold. Emits per-sample rows for
// the active routes, summary CSVs, the reconstruction curve and overlays.
inline EvalOutputs run_eval(const fs::path& run_dir, const fs::path& dataset_dir, int fold,
                            const fs::path& out_dir, int overlay_count = 4) {
  const PhantomDataset ds = load_dataset(dataset_dir);
  if (fold < 0 || fold >= ds.folds) throw ConfigError("eval: fold out of range");

  const nlohmann::json manifest = nlohmann::json::parse(read_file(run_dir / "manifest.json"));
  const Setup setup = parse_setup(manifest.at("setup").get<std::string>());
  if (manifest.at("fold").get<int>() != fold)
    throw ConfigError("eval: fold does not match the trained run");
  if (manifest.at("dataset_hash").get<std::string>() != dataset_hash(ds))
    throw ConfigError("eval: dataset hash does not match the trained run");

  const std::string ckpt_bytes = read_file(run_dir / "best.ckpt");
  const CheckpointMeta meta = decode_checkpoint_header(ckpt_bytes);
  if (meta.config.input_size != ds.spec.grid.height)
    throw ConfigError("eval: checkpoint grid does not match the dataset");
  Network net(meta.config, 0);
  AdamOptimizer adam(1e-3);
  restore_checkpoint(ckpt_bytes, net, adam);
  const StatShapeModel ssm = load_shape_model(run_dir / "ssm.json");

  const GridSpec grid = ds.spec.grid;
  const int m_modes = meta.config.shape_modes;
  const bool map_route = setup != Setup::R;
  const bool contour_route =
      setup == Setup::R || setup == Setup::RS || setup == Setup::RSAps;

  std::vector<const PhantomSample*> val;
  for (const PhantomSample& s : ds.samples) {
    if (s.fold == fold) val.push_back(&s);
  }
  if (val.empty()) throw ConfigError("eval: fold has no samples");

  // Batched forward in evaluation mode.
  const int hw = grid.height * grid.width;
  const std::size_t map_len = static_cast<std::size_t>(meta.config.map_channels) * hw;
  std::vector<std::vector<float>> pred_coeffs(val.size()), pred_maps(val.size());
  std::vector<std::array<float, 3>> pred_pose(val.size());
  {
    const int bs = 16;
    std::size_t done = 0;
    while (done < val.size()) {
      const int b_count = static_cast<int>(std::min<std::size_t>(bs, val.size() - done));
      Tensor images(b_count, 1, grid.height, grid.width);
      for (int b = 0; b < b_count; ++b)
        std::copy_n(val[done + b]->image.data(), hw,
                    images.data() + static_cast<std::size_t>(b) * hw);
      NetworkOutput out = net.forward(images, false);
      for (int b = 0; b < b_count; ++b) {
        pred_coeffs[done + b].assign(
            out.shape_coeffs.data() + static_cast<std::size_t>(b) * m_modes,
            out.shape_coeffs.data() + static_cast<std::size_t>(b + 1) * m_modes);
        const float* pp = out.pose.data() + static_cast<std::size_t>(b) * 3;
        pred_pose[done + b] = {pp[0], pp[1], pp[2]};
        pred_maps[done + b].assign(out.maps.data() + static_cast<std::size_t>(b) * map_len,
                                   out.maps.data() + static_cast<std::size_t>(b + 1) * map_len);
      }
      done += static_cast<std::size_t>(b_count);
    }
  }

  EvalOutputs outputs;
  outputs.rows.resize(val.size() * 2);
  std::vector<std::string> overlay_files(val.size());

  fs::create_directories(out_dir / "overlays");

#pragma omp parallel for schedule(dynamic)
  for (int vi = 0; vi < static_cast<int>(val.size()); ++vi) {
    const PhantomSample& s = *val[static_cast<std::size_t>(vi)];
    const Contour gt_endo = closed_spline(s.shape.endo);
    const Contour gt_epi = closed_spline(s.shape.epi);
    const ClassMaps gt_maps = maps_from_landmarks(s.shape, grid);
    const RegionMasks gt_masks =
        class_masks(hard_binarize(gt_maps.endo), hard_binarize(gt_maps.epi));

    std::vector<OverlayContour> overlay;
    overlay.push_back({gt_endo.dense, "#e53935", "truth"});
    overlay.push_back({gt_epi.dense, "#e53935", ""});

    // ---- Map route ----
    EvalRow map_row;
    map_row.id = s.id;
    map_row.patient = s.patient;
    map_row.fold = s.fold;
    map_row.route = "map";
    map_row.gt = s.measures;
    if (map_route) {
      const auto& mp = pred_maps[static_cast<std::size_t>(vi)];
      const DistanceMap d_endo =
          detail::map_from_channel({mp.data(), static_cast<std::size_t>(hw)}, grid);
      const DistanceMap d_epi = detail::map_from_channel(
          {mp.data() + hw, static_cast<std::size_t>(hw)}, grid);
      const RegionMasks masks = class_masks(hard_binarize(d_endo), hard_binarize(d_epi));
      map_row.dsc_lv = dice(masks.cavity, gt_masks.cavity);
      map_row.dsc_myo = dice(masks.myocardium, gt_masks.myocardium);
      try {
        const Contour pe = shapeseg::detail::dominant_zero_contour(d_endo);
        const Contour pp = shapeseg::detail::dominant_zero_contour(d_epi);
        map_row.mbe = 0.5 * (boundary_error(pe, gt_endo) + boundary_error(pp, gt_epi));
        map_row.hd = 0.5 * (hausdorff(pe, gt_endo) + hausdorff(pp, gt_epi));
        overlay.push_back({pe.dense, "#fdd835", "map"});
        overlay.push_back({pp.dense, "#fdd835", ""});
      } catch (const std::exception&) {
        // Boundary metrics stay NaN when no usable zero contour exists.
      }
      if (contour_route) {
        // Measures from the predicted maps and predicted position.
        try {
          const PoseParams pose_p = denormalize_pose_params(
              {pred_pose[static_cast<std::size_t>(vi)][0],
               pred_pose[static_cast<std::size_t>(vi)][1],
               pred_pose[static_cast<std::size_t>(vi)][2]},
              grid);
          map_row.meas = measures_from_maps({d_endo, d_epi}, pose_p.center(), pose_p.theta,
                                            ds.spec.n_landmarks);
        } catch (const std::exception&) {
        }
      }
    }
    outputs.rows[static_cast<std::size_t>(vi) * 2] = map_row;

    // ---- Contour route ----
    EvalRow ct_row;
    ct_row.id = s.id;
    ct_row.patient = s.patient;
    ct_row.fold = s.fold;
    ct_row.route = "contour";
    ct_row.gt = s.measures;
    if (contour_route) {
      const LandmarkShape lm = predict_to_landmarks(
          pred_coeffs[static_cast<std::size_t>(vi)], pred_pose[static_cast<std::size_t>(vi)],
          ssm, grid);
      const Contour pe = closed_spline(lm.endo);
      const Contour pp = closed_spline(lm.epi);
      const RegionMasks masks =
          class_masks(hard_binarize(signed_distance(pe, grid)),
                      hard_binarize(signed_distance(pp, grid)));
      ct_row.dsc_lv = dice(masks.cavity, gt_masks.cavity);
      ct_row.dsc_myo = dice(masks.myocardium, gt_masks.myocardium);
      ct_row.mbe = 0.5 * (boundary_error(pe, gt_endo) + boundary_error(pp, gt_epi));
      ct_row.hd = 0.5 * (hausdorff(pe, gt_endo) + hausdorff(pp, gt_epi));
      const PoseParams pose_p = denormalize_pose_params(
          {pred_pose[static_cast<std::size_t>(vi)][0],
           pred_pose[static_cast<std::size_t>(vi)][1],
           pred_pose[static_cast<std::size_t>(vi)][2]},
          grid);
      const PoseErrors pe_err = pose_errors(s.pose, pose_p);
      ct_row.dd = pe_err.dd;
      ct_row.dtheta = pe_err.dtheta;
      ct_row.meas = measures_from_landmarks(lm);
      ct_row.contour_components_cavity = count_components(masks.cavity);
      ct_row.contour_components_myo = count_components(masks.myocardium);
      overlay.push_back({pe.dense, "#00e5ff", "contour"});
      overlay.push_back({pp.dense, "#00e5ff", ""});
    }
    outputs.rows[static_cast<std::size_t>(vi) * 2 + 1] = ct_row;

    if (vi < overlay_count) {
      overlay_files[static_cast<std::size_t>(vi)] = overlay_svg(s.image, grid, overlay);
    }
  }

  for (int vi = 0; vi < static_cast<int>(val.size()) && vi < overlay_count; ++vi) {
    char name[48];
    std::snprintf(name, sizeof(name), "sample_%05d.svg", val[static_cast<std::size_t>(vi)]->id);
    write_file(out_dir / "overlays" / name, overlay_files[static_cast<std::size_t>(vi)]);
  }

  // Reconstruction curves: ground-truth and predicted coefficients with
  // ground-truth poses.
  if (contour_route) {
    std::vector<LandmarkShape> shapes;
    std::vector<PoseParams> poses;
    std::vector<ShapeCoefficients> gt_b, pred_b;
    for (std::size_t vi = 0; vi < val.size(); ++vi) {
      const PhantomSample& s = *val[vi];
      shapes.push_back(s.shape);
      poses.push_back(s.pose);
      gt_b.push_back(project(normalize_pose(s.shape, s.pose), ssm, m_modes));
      ShapeCoefficients bp(m_modes);
      for (int m = 0; m < m_modes; ++m) bp[m] = pred_coeffs[vi][static_cast<std::size_t>(m)];
      pred_b.push_back(bp);
    }
    outputs.recon_gt = reconstruction_curve(ssm, shapes, poses, gt_b, m_modes);
    outputs.recon_pred = reconstruction_curve(ssm, shapes, poses, pred_b, m_modes);
    std::string curve_csv = "m,gt_mm,pred_mm\n";
    for (int m = 0; m < m_modes; ++m) {
      curve_csv += std::to_string(m + 1) + "," +
                   detail::csv_num(outputs.recon_gt[static_cast<std::size_t>(m)]) + "," +
                   detail::csv_num(outputs.recon_pred[static_cast<std::size_t>(m)]) + "\n";
    }
    write_file(out_dir / "recon_curve.csv", curve_csv);
  }

  // Per-sample CSV.
  std::string csv =
      "id,patient,fold,setup,route,dsc_lv,dsc_myo,mbe,hd,dd,dtheta,"
      "area_lv,area_myo,dim_0,dim_1,dim_2,rwt_0,rwt_1,rwt_2,rwt_3,rwt_4,rwt_5,"
      "gt_area_lv,gt_area_myo,gt_dim_0,gt_dim_1,gt_dim_2,gt_rwt_0,gt_rwt_1,gt_rwt_2,gt_rwt_3,"
      "gt_rwt_4,gt_rwt_5,cavity_components,myo_components\n";
  for (const EvalRow& r : outputs.rows) {
    const bool has_metrics = !std::isnan(r.dsc_lv) || !std::isnan(r.mbe) || !std::isnan(r.dd) ||
                             !std::isnan(r.meas.area_lv);
    if (!has_metrics) continue;  // route inactive for this setup
    csv += std::to_string(r.id) + "," + std::to_string(r.patient) + "," +
           std::to_string(r.fold) + "," + setup_name(setup) + "," + r.route;
    for (double v : {r.dsc_lv, r.dsc_myo, r.mbe, r.hd, r.dd, r.dtheta})
      csv += "," + detail::csv_num(v);
    detail::append_measures(csv, r.meas);
    detail::append_measures(csv, r.gt);
    csv += "," + std::to_string(r.contour_components_cavity) + "," +
           std::to_string(r.contour_components_myo) + "\n";
  }
  fs::create_directories(out_dir);
  write_file(out_dir / "per_sample.csv", csv);

  // Metric summary (mean and sd per route).
  std::string summary = "route,metric,mean,sd,n\n";
  for (const std::string route : {"map", "contour"}) {
    const char* names[6] = {"dsc_lv", "dsc_myo", "mbe", "hd", "dd", "dtheta"};
    for (int metric = 0; metric < 6; ++metric) {
      std::vector<double> vals;
      for (const EvalRow& r : outputs.rows) {
        if (r.route != route) continue;
        const double v = (metric == 0)   ? r.dsc_lv
                         : (metric == 1) ? r.dsc_myo
                         : (metric == 2) ? r.mbe
                         : (metric == 3) ? r.hd
                         : (metric == 4) ? r.dd
                                         : r.dtheta;
        vals.push_back(v);
      }
      const detail::Stat st = detail::nan_stat(vals);
      if (st.n == 0) continue;
      summary += route + "," + names[metric] + "," + detail::csv_num(st.mean) + "," +
                 detail::csv_num(st.sd) + "," + std::to_string(st.n) + "\n";
    }
  }
  write_file(out_dir / "metrics_summary.csv", summary);

  // Measure summary: MAE and Pearson rho per route (dims and RWT pooled).
  std::string msummary = "route,measure,mae,rho,n\n";
  for (const std::string route : {"map", "contour"}) {
    auto collect = [&](auto&& truth_of, auto&& pred_of, const std::string& name) {
      std::vector<double> t, p;
      for (const EvalRow& r : outputs.rows) {
        if (r.route != route) continue;
        truth_of(r, t);
        pred_of(r, p);
      }
      std::vector<double> tc, pc;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (std::isnan(p[i]) || std::isnan(t[i])) continue;
        tc.push_back(t[i]);
        pc.push_back(p[i]);
      }
      if (tc.size() < 2) return;
      try {
        const AggregateStats st = aggregate(tc, pc);
        msummary += route + "," + name + "," + detail::csv_num(st.mae) + "," +
                    detail::csv_num(st.rho) + "," + std::to_string(tc.size()) + "\n";
      } catch (const std::exception&) {
      }
    };
    collect([](const EvalRow& r, auto& v) { v.push_back(r.gt.area_lv); },
            [](const EvalRow& r, auto& v) { v.push_back(r.meas.area_lv); }, "area_lv");
    collect([](const EvalRow& r, auto& v) { v.push_back(r.gt.area_myo); },
            [](const EvalRow& r, auto& v) { v.push_back(r.meas.area_myo); }, "area_myo");
    collect([](const EvalRow& r, auto& v) { for (double x : r.gt.dims) v.push_back(x); },
            [](const EvalRow& r, auto& v) { for (double x : r.meas.dims) v.push_back(x); },
            "dim");
    collect([](const EvalRow& r, auto& v) { for (double x : r.gt.rwt) v.push_back(x); },
            [](const EvalRow& r, auto& v) { for (double x : r.meas.rwt) v.push_back(x); },
            "rwt");
  }
  write_file(out_dir / "measures_summary.csv", msummary);
  return outputs;
}

// ---------------------------------------------------------------------------
// Cross validation: train and evaluate every fold into fold-scoped subdirs.

inline void run_xval(const ExperimentConfig& cfg, const fs::path& dataset_dir,
                     const fs::path& out_dir, bool quiet = false) {
  for (int fold = 0; fold < cfg.folds; ++fold) {
    const fs::path fold_dir = out_dir / ("fold" + std::to_string(fold));
    run_train(cfg, dataset_dir, fold, fold_dir, false, quiet);
    run_eval(fold_dir, dataset_dir, fold, fold_dir / "eval");
  }
}

// ---------------------------------------------------------------------------
// Report: summary tables with Wilcoxon tests between setups, reconstruction
// and training curve plots, and overlay collection.

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    throw RuntimeError("csv: missing column " + name);
  }
};

inline CsvTable read_csv(const fs::path& path) {
  CsvTable t;
  const auto lines = split(read_file(path), '\n');
  if (lines.empty()) throw RuntimeError("csv: empty file " + path.string());
  t.header = split(trim(lines[0]), ',');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    t.rows.push_back(split(trim(lines[i]), ','));
  }
  return t;
}

struct RunData {
  std::string setup;
  int fold = 0;
  fs::path dir;
  CsvTable per_sample;
  std::vector<double> epochs, val_total;
  std::vector<double> recon_gt, recon_pred;  // may be empty
};

inline RunData load_run(const fs::path& dir) {
  RunData run;
  run.dir = dir;
  const nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  run.setup = manifest.at("setup").get<std::string>();
  run.fold = manifest.at("fold").get<int>();
  const fs::path eval_dir = fs::exists(dir / "eval" / "per_sample.csv") ? dir / "eval" : dir;
  if (!fs::exists(eval_dir / "per_sample.csv"))
    throw ConfigError("report: run " + dir.string() + " has no evaluation output");
  run.per_sample = read_csv(eval_dir / "per_sample.csv");
  const CsvTable hist = read_csv(dir / "history.csv");
  const int ep_col = hist.col("epoch");
  const int val_col = hist.col("val_total");
  for (const auto& row : hist.rows) {
    run.epochs.push_back(std::stod(row[static_cast<std::size_t>(ep_col)]));
    run.val_total.push_back(std::stod(row[static_cast<std::size_t>(val_col)]));
  }
  if (fs::exists(eval_dir / "recon_curve.csv")) {
    const CsvTable curve = read_csv(eval_dir / "recon_curve.csv");
    const int gt_col = curve.col("gt_mm");
    const int pred_col = curve.col("pred_mm");
    for (const auto& row : curve.rows) {
      run.recon_gt.push_back(std::stod(row[static_cast<std::size_t>(gt_col)]));
      run.recon_pred.push_back(std::stod(row[static_cast<std::size_t>(pred_col)]));
    }
  }
  return run;
}

// Values of one metric column keyed by (fold, id), one map per setup+route.
using Keyed = std::map<std::pair<int, int>, double>;

inline Keyed keyed_metric(const std::vector<const RunData*>& runs, const std::string& route,
                          const std::string& column) {
  Keyed out;
  for (const RunData* run : runs) {
    const int c_route = run->per_sample.col("route");
    const int c_id = run->per_sample.col("id");
    const int c_fold = run->per_sample.col("fold");
    const int c_val = run->per_sample.col(column);
    for (const auto& row : run->per_sample.rows) {
      if (row[static_cast<std::size_t>(c_route)] != route) continue;
      const double v = std::stod(row[static_cast<std::size_t>(c_val)]);
      out[{std::stoi(row[static_cast<std::size_t>(c_fold)]),
           std::stoi(row[static_cast<std::size_t>(c_id)])}] = v;
    }
  }
  return out;
}

inline double paired_wilcoxon(const Keyed& a, const Keyed& b) {
  std::vector<double> va, vb;
  for (const auto& [key, value] : a) {
    const auto it = b.find(key);
    if (it == b.end() || std::isnan(value) || std::isnan(it->second)) continue;
    va.push_back(value);
    vb.push_back(it->second);
  }
  try {
    return wilcoxon_signed_rank(va, vb);
  } catch (const std::exception&) {
    return kNaN;
  }
}

}  // namespace detail

inline void run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");
  std::vector<detail::RunData> runs;
  for (const fs::path& dir : run_dirs) runs.push_back(detail::load_run(dir));
  fs::create_directories(out_dir);

  // Group by setup, Table-1 order.
  const std::vector<std::string> canonical{"S_mu0", "S", "R", "RS", "RS-Aps"};
  std::map<std::string, std::vector<const detail::RunData*>> by_setup;
  for (const auto& run : runs) by_setup[run.setup].push_back(&run);

  // ---- Segmentation metric table ----
  const std::vector<std::string> metrics{"dsc_lv", "dsc_myo", "mbe", "hd", "dd", "dtheta"};
  std::string seg = "route,setup";
  for (const auto& m : metrics) seg += "," + m + "_mean," + m + "_sd";
  for (const auto& m : metrics) seg += ",p_" + m;
  seg += "\n";
  for (const std::string route : {"map", "contour"}) {
    std::vector<std::string> prev_setup;
    std::map<std::string, detail::Keyed> cache;
    for (const std::string& setup : canonical) {
      if (!by_setup.count(setup)) continue;
      bool any = false;
      std::string line = route + "," + setup;
      std::vector<double> pvals;
      for (const auto& metric : metrics) {
        const detail::Keyed k = detail::keyed_metric(by_setup[setup], route, metric);
        cache[setup + "::" + metric] = k;
        std::vector<double> vals;
        for (const auto& [key, v] : k) vals.push_back(v);
        const detail::Stat st = detail::nan_stat(vals);
        any = any || st.n > 0;
        line += "," + detail::csv_num(st.mean) + "," + detail::csv_num(st.sd);
        double p = kNaN;
        if (!prev_setup.empty()) {
          p = detail::paired_wilcoxon(cache[prev_setup.back() + "::" + metric], k);
        }
        pvals.push_back(p);
      }
      if (!any) continue;
      for (double p : pvals) line += "," + detail::csv_num(p);
      seg += line + "\n";
      prev_setup.push_back(setup);
    }
  }
  write_file(out_dir / "table_seg.csv", seg);

  // ---- Clinical measure table (MAE, rho, Wilcoxon on absolute errors) ----
  struct MeasureCols {
    std::string name;
    std::vector<std::string> pred, gt;
  };
  const std::vector<MeasureCols> measure_sets{
      {"area_lv", {"area_lv"}, {"gt_area_lv"}},
      {"area_myo", {"area_myo"}, {"gt_area_myo"}},
      {"dim", {"dim_0", "dim_1", "dim_2"}, {"gt_dim_0", "gt_dim_1", "gt_dim_2"}},
      {"rwt",
       {"rwt_0", "rwt_1", "rwt_2", "rwt_3", "rwt_4", "rwt_5"},
       {"gt_rwt_0", "gt_rwt_1", "gt_rwt_2", "gt_rwt_3", "gt_rwt_4", "gt_rwt_5"}}};
  std::string mt = "route,setup";
  for (const auto& ms : measure_sets) mt += ",mae_" + ms.name + ",rho_" + ms.name + ",p_" + ms.name;
  mt += "\n";
  for (const std::string route : {"map", "contour"}) {
    std::map<std::string, std::map<std::string, detail::Keyed>> err_cache;
    std::vector<std::string> prev;
    for (const std::string& setup : canonical) {
      if (!by_setup.count(setup)) continue;
      std::string line = route + "," + setup;
      bool any = false;
      for (const auto& ms : measure_sets) {
        std::vector<double> truth, pred;
        detail::Keyed abs_err;
        for (std::size_t part = 0; part < ms.pred.size(); ++part) {
          const detail::Keyed kp = detail::keyed_metric(by_setup[setup], route, ms.pred[part]);
          const detail::Keyed kt = detail::keyed_metric(by_setup[setup], route, ms.gt[part]);
          for (const auto& [key, v] : kp) {
            const auto it = kt.find(key);
            if (it == kt.end() || std::isnan(v) || std::isnan(it->second)) continue;
            truth.push_back(it->second);
            pred.push_back(v);
            abs_err[{key.first, key.second * 100 + static_cast<int>(part)}] =
                std::abs(v - it->second);
          }
        }
        double mae = kNaN, rho = kNaN, p = kNaN;
        if (truth.size() >= 2) {
          try {
            const AggregateStats st = aggregate(truth, pred);
            mae = st.mae;
            rho = st.rho;
            any = true;
          } catch (const std::exception&) {
          }
        }
        if (!prev.empty()) {
          p = detail::paired_wilcoxon(err_cache[prev.back()][ms.name], abs_err);
        }
        err_cache[setup][ms.name] = std::move(abs_err);
        line += "," + detail::csv_num(mae) + "," + detail::csv_num(rho) + "," +
                detail::csv_num(p);
      }
      if (!any) continue;
      mt += line + "\n";
      prev.push_back(setup);
    }
  }
  write_file(out_dir / "table_measures.csv", mt);

  // ---- Reconstruction-curve plot (per-setup mean of predicted curves) ----
  {
    LineChart chart("Landmark reconstruction error vs number of modes", "modes M",
                    "mean landmark distance [mm]");
    const std::vector<std::string> colors{"#1e88e5", "#43a047", "#fb8c00", "#8e24aa", "#00acc1"};
    std::vector<double> gt_curve;
    int color_i = 0;
    for (const std::string& setup : canonical) {
      if (!by_setup.count(setup)) continue;
      std::vector<double> mean_curve;
      int n = 0;
      for (const detail::RunData* run : by_setup[setup]) {
        if (run->recon_pred.empty()) continue;
        if (mean_curve.empty()) mean_curve.assign(run->recon_pred.size(), 0.0);
        for (std::size_t m = 0; m < run->recon_pred.size() && m < mean_curve.size(); ++m)
          mean_curve[m] += run->recon_pred[m];
        ++n;
        if (gt_curve.empty()) gt_curve = run->recon_gt;
      }
      if (n == 0) continue;
      std::vector<double> xs;
      for (std::size_t m = 0; m < mean_curve.size(); ++m) {
        mean_curve[m] /= n;
        xs.push_back(static_cast<double>(m + 1));
      }
      chart.add_series(setup, colors[static_cast<std::size_t>(color_i++) % colors.size()], xs,
                       mean_curve);
    }
    if (!gt_curve.empty()) {
      std::vector<double> xs;
      for (std::size_t m = 0; m < gt_curve.size(); ++m) xs.push_back(static_cast<double>(m + 1));
      chart.add_series("gt", "#757575", xs, gt_curve);
    }
    write_file(out_dir / "recon_curve.svg", chart.render());
  }

  // ---- Training curves ----
  {
    LineChart chart("Validation loss", "epoch", "total loss");
    const std::vector<std::string> colors{"#1e88e5", "#43a047", "#fb8c00", "#8e24aa",
                                          "#00acc1", "#e53935", "#6d4c41", "#3949ab"};
    int color_i = 0;
    for (const auto& run : runs) {
      chart.add_series(run.setup + " fold " + std::to_string(run.fold),
                       colors[static_cast<std::size_t>(color_i++) % colors.size()], run.epochs,
                       run.val_total);
    }
    write_file(out_dir / "training_curves.svg", chart.render());
  }

  // ---- Collect overlays ----
  fs::create_directories(out_dir / "overlays");
  for (const auto& run : runs) {
    const fs::path src = fs::exists(run.dir / "eval" / "overlays") ? run.dir / "eval" / "overlays"
                                                                   : run.dir / "overlays";
    if (!fs::exists(src)) continue;
    for (const auto& entry : fs::directory_iterator(src)) {
      const std::string name = run.setup + "_fold" + std::to_string(run.fold) + "_" +
                               entry.path().filename().string();
      fs::copy_file(entry.path(), out_dir / "overlays" / name,
                    fs::copy_options::overwrite_existing);
    }
  }
}

}  // namespace shapeseg::harness
