#include "omni/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "omni/marching_cubes.hpp"
#include "omni/png_io.hpp"
#include "omni/scene_io.hpp"
#include "omni/ssim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace omni {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Wraps a stage so failures abort citing the frame index and stage name.
template <typename F>
auto run_stage(int t, const std::string& stage, FrameTiming& timing, F&& fn) {
  const auto t0 = Clock::now();
  auto wrap = [&](const std::string& what) {
    return "frame " + std::to_string(t) + ", stage " + stage + ": " + what;
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timing.stages.push_back({stage, ms_since(t0)});
    } else {
      auto result = fn();
      timing.stages.push_back({stage, ms_since(t0)});
      return result;
    }
  } catch (const ConfigError& e) {
    throw ConfigError(wrap(e.what()));
  } catch (const NumericalError& e) {
    throw NumericalError(wrap(e.what()));
  } catch (const std::exception& e) {
    throw DataError(wrap(e.what()));
  }
}

const std::vector<std::string> kStageOrder = {
    "segment",        "integrate_tsdf", "associate",       "update_voxels",
    "update_codebook", "new_voxel_set",  "seed_gaussians", "select_keyframe",
    "optimize"};

}  // namespace

std::string RunReport::to_json() const {
  json j;
  j["stage_order"] = stage_order;
  j["final"] = {{"voxels", final_voxels},     {"blocks", final_blocks},
                {"instances", final_instances}, {"gaussians", final_gaussians},
                {"keyframes", final_keyframes}};
  j["loss_trace"] = loss_trace_path;
  json frames_json = json::array();
  for (const auto& f : frames) {
    json jf;
    jf["t"] = f.t;
    for (const auto& s : f.stages) jf["ms"][s.stage] = s.ms;
    frames_json.push_back(jf);
  }
  j["frames"] = frames_json;
  return j.dump(2);
}

double RunReport::median_stage_ms(const std::string& stage) const {
  std::vector<double> v;
  for (const auto& f : frames)
    for (const auto& s : f.stages)
      if (s.stage == stage) v.push_back(s.ms);
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double RunReport::median_frame_ms() const {
  std::vector<double> v;
  for (const auto& f : frames) {
    double total = 0;
    for (const auto& s : f.stages) total += s.ms;
    v.push_back(total);
  }
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

BuildResult run_build(const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);

  BuildResult result(cfg.voxel_resolution, cfg.truncation);
  std::optional<DatasetReader> reader;
  std::size_t n_frames = 0;

  if (cfg.source == "synthetic") {
    result.scene = make_scene_by_name(cfg.scene, cfg.frames, cfg.image_size,
                                      cfg.embedding_dim, cfg.seed);
    result.has_scene = true;
    n_frames = result.scene.trajectory.size();
  } else {
    reader.emplace(cfg.input_manifest);
    // cfg.frames is the frame budget for both sources.
    n_frames = std::min<std::size_t>(reader->size(), cfg.frames);
  }

  Rng opt_rng(mix_seed(cfg.seed, 0xab501));
  std::vector<std::string> log_lines;
  std::vector<std::pair<int, LossReport>> loss_trace;
  int frames_since_kf = cfg.keyframes.n_key;  // forces the first frame in
  int global_iter = 0;

  for (std::size_t fi = 0; fi < n_frames; ++fi) {
    const int t = static_cast<int>(fi);
    FrameTiming timing;
    timing.t = t;

    // segment: obtain the frame and its (post-processed, possibly noisy)
    // segmentation observation.
    auto rec = run_stage(t, "segment", timing, [&]() -> FrameRecord {
      FrameRecord r;
      if (cfg.source == "synthetic") {
        RaycastResult rc = raycast_frame(result.scene.world, result.scene.trajectory[fi],
                                         result.scene.intrinsics);
        r.frame = std::move(rc.frame);
        r.frame.timestamp = t;
        r.observation = std::move(rc.observation);
        if (cfg.noise.depth_sigma > 0) {
          Rng rng(mix_seed(cfg.seed, 0xd0 + fi));
          perturb_depth(r.frame.depth, cfg.noise.depth_sigma, rng);
        }
      } else {
        auto next = reader->next();
        if (!next) throw DataError("dataset ended early");
        r = std::move(*next);
      }
      std::vector<std::size_t> keep;
      auto masks = postprocess_masks(r.observation.masks, cfg.erosion_radius, &keep);
      SegObservation obs;
      obs.masks = std::move(masks);
      for (std::size_t k : keep) {
        obs.embeddings.push_back(r.observation.embeddings[k]);
        if (k < r.observation.captions.size())
          obs.captions.push_back(r.observation.captions[k]);
      }
      r.observation = std::move(obs);
      if (cfg.noise.p_drop > 0 || cfg.noise.p_split > 0 || cfg.noise.p_merge > 0 ||
          cfg.noise.embed_sigma > 0) {
        NoiseConfig frame_noise = cfg.noise;
        frame_noise.rng_seed = mix_seed(cfg.seed, 0x5e9 + fi);
        r.observation = perturb_segmentation(r.observation, frame_noise);
      }
      return r;
    });

    run_stage(t, "integrate_tsdf", timing, [&] { result.grid.integrate_tsdf(rec.frame); });

    auto results = run_stage(t, "associate", timing, [&] {
      auto r = associate(rec.observation, rec.frame, result.grid, result.codebook,
                         cfg.fusion);
      // Visibility ratios read the pre-update argmax sets, so they are
      // fixed here, before the counting pass runs.
      auto ratios = visibility_ratios(r, result.grid);
      return std::make_pair(std::move(r), std::move(ratios));
    });

    run_stage(t, "update_voxels", timing,
              [&] { update_voxels(results.first, result.grid, cfg.fusion.counting); });

    run_stage(t, "update_codebook", timing, [&] {
      update_codebook(results.first, rec.observation, results.second, result.codebook);
    });

    auto fresh = run_stage(t, "new_voxel_set", timing, [&] {
      std::vector<VoxelKey> region_union;
      for (const auto& r : results.first)
        region_union.insert(region_union.end(), r.voxels.begin(), r.voxels.end());
      return result.grid.new_voxel_set(region_union);
    });

    run_stage(t, "seed_gaussians", timing,
              [&] { seed_gaussians(fresh, result.grid, result.field); });

    const bool is_kf = run_stage(t, "select_keyframe", timing, [&] {
      return select_keyframe(rec.frame, result.grid, cfg.keyframes, frames_since_kf,
                             result.keyframes);
    });
    frames_since_kf = is_kf ? 0 : frames_since_kf + 1;

    run_stage(t, "optimize", timing, [&] {
      if (result.field.size() == 0 || result.keyframes.size() == 0) return;
      CameraModel* current_cam =
          is_kf ? &result.keyframes.keyframes.back().camera : nullptr;
      const int iters = t == 0 ? cfg.optimizer.warmup_iters : cfg.optimizer.iters_per_frame;
      for (int it = 0; it < iters; ++it) {
        const LossReport rep = optimize_step(result.field, result.keyframes, rec.frame,
                                             current_cam, cfg.optimizer, opt_rng);
        loss_trace.emplace_back(global_iter++, rep);
      }
    });

    for (const auto& r : results.first) log_lines.push_back(association_log_line(t, r));
    result.report.frames.push_back(std::move(timing));
  }

  result.report.stage_order = kStageOrder;
  result.report.final_voxels = result.grid.allocated_voxel_count();
  result.report.final_blocks = result.grid.block_count();
  result.report.final_instances = result.codebook.size();
  result.report.final_gaussians = result.field.size();
  result.report.final_keyframes = result.keyframes.size();
  result.report.loss_trace_path = (fs::path(cfg.out_dir) / "loss_trace.csv").string();

  // Persist artifacts.
  cfg.save((fs::path(cfg.out_dir) / "config.toml").string());
  result.grid.save_snapshot((fs::path(cfg.out_dir) / "grid.ovxg").string());
  result.codebook.save((fs::path(cfg.out_dir) / "codebook.ovcb").string());
  write_splat_ply((fs::path(cfg.out_dir) / "splat.ply").string(), result.field);
  {
    std::ofstream f(fs::path(cfg.out_dir) / "association_log.jsonl");
    for (const auto& line : log_lines) f << line << "\n";
  }
  {
    std::ofstream f(result.report.loss_trace_path);
    f.precision(17);
    f << "iter,rgb,ssim,depth,normal,total\n";
    for (const auto& [it, rep] : loss_trace)
      f << it << "," << rep.rgb << "," << rep.ssim << "," << rep.depth << "," << rep.normal
        << "," << rep.total << "\n";
  }
  {
    json kj = json::array();
    for (const auto& kf : result.keyframes.keyframes) {
      kj.push_back({{"t", kf.frame.timestamp},
                    {"omega_raw", kf.camera.omega_raw},
                    {"omega_trans", kf.camera.omega_trans},
                    {"x_trans", kf.camera.x_trans},
                    {"y_trans", kf.camera.y_trans}});
    }
    std::ofstream f(fs::path(cfg.out_dir) / "keyframes.json");
    f << kj.dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(cfg.out_dir) / "report.json");
    f << result.report.to_json() << "\n";
  }
  return result;
}

// --- Render / eval -------------------------------------------------------------------

namespace {

struct LoadedArtifacts {
  PipelineConfig cfg;
  GaussianField field;
  std::vector<Pose> poses;
  Intrinsics intrinsics;
  std::vector<FrameBundle> targets;       // color+depth ground truth per pose
  std::vector<LabelImage> gt_instances;   // per-pixel gt ids (may be empty)
  std::map<std::uint32_t, Eigen::VectorXd> class_embeddings;
  SceneSpec scene;
  bool has_scene = false;
};

LoadedArtifacts load_artifacts(const std::string& dir, bool with_targets) {
  LoadedArtifacts a;
  const fs::path d(dir);
  if (!fs::exists(d / "config.toml"))
    throw DataError("artifacts missing config.toml in " + dir);
  a.cfg = PipelineConfig::from_file((d / "config.toml").string());
  if (!fs::exists(d / "splat.ply")) throw DataError("artifacts missing splat.ply in " + dir);
  a.field = read_splat_ply((d / "splat.ply").string());

  if (a.cfg.source == "synthetic") {
    a.scene = make_scene_by_name(a.cfg.scene, a.cfg.frames, a.cfg.image_size,
                                 a.cfg.embedding_dim, a.cfg.seed);
    a.has_scene = true;
    a.poses = a.scene.trajectory;
    a.intrinsics = a.scene.intrinsics;
    for (const auto& obj : a.scene.world.objects)
      a.class_embeddings[obj.instance_id] = obj.embedding;
    if (with_targets) {
      for (std::size_t i = 0; i < a.poses.size(); ++i) {
        RaycastResult rc = raycast_frame(a.scene.world, a.poses[i], a.intrinsics);
        rc.frame.timestamp = static_cast<int>(i);
        a.targets.push_back(std::move(rc.frame));
        a.gt_instances.push_back(std::move(rc.instance_ids));
      }
    }
  } else {
    DatasetReader reader(a.cfg.input_manifest);
    a.intrinsics = reader.intrinsics();
    std::size_t index = 0;
    bool all_gt = true;
    while (auto rec = reader.next()) {
      a.poses.push_back(rec->frame.pose);
      if (with_targets) {
        if (auto gt = reader.gt_instances(index))
          a.gt_instances.push_back(std::move(*gt));
        else
          all_gt = false;
        a.targets.push_back(std::move(rec->frame));
      }
      ++index;
    }
    if (!all_gt) a.gt_instances.clear();
    const fs::path class_path =
        fs::path(a.cfg.input_manifest).parent_path() / "gt" / "class_embeddings.json";
    if (fs::exists(class_path)) {
      std::ifstream f(class_path);
      const json j = json::parse(f);
      for (const auto& [key, value] : j.items()) {
        Eigen::VectorXd e(value.size());
        for (std::size_t i = 0; i < value.size(); ++i) e[i] = value[i].get<double>();
        a.class_embeddings[static_cast<std::uint32_t>(std::stoul(key))] = e;
      }
    }
  }
  return a;
}

LabelImage depth_to_mm(const Image& depth) {
  LabelImage mm(depth.width(), depth.height());
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      const double v = depth.at(y, x) * 1000.0 + 0.5;
      mm.at(y, x) = v <= 0 ? 0 : static_cast<std::uint32_t>(std::min(v, 65535.0));
    }
  return mm;
}

ColorImage normal_to_image(const NormalImage& n) {
  ColorImage img(n.nx.width(), n.nx.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      img.r.at(y, x) = (n.nx.at(y, x) + 1.0) / 2.0;
      img.g.at(y, x) = (n.ny.at(y, x) + 1.0) / 2.0;
      img.b.at(y, x) = (n.nz.at(y, x) + 1.0) / 2.0;
    }
  return img;
}

// Rendered depth is only trusted where enough opacity accumulated.
Image masked_depth(const RenderOutput& out, double min_alpha = 0.5) {
  Image d = out.depth;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (out.alpha.data()[i] < min_alpha) d.data()[i] = 0.0;
  return d;
}

}  // namespace

void run_render(const std::string& artifacts_dir, const std::string& render_dir) {
  LoadedArtifacts a = load_artifacts(artifacts_dir, false);
  fs::create_directories(render_dir);
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    const RenderOutput out = render(a.field.primitives, a.poses[i], a.intrinsics);
    const std::string stem = (fs::path(render_dir) / std::to_string(i)).string();
    write_png_rgb8(stem + "_color.png", out.color);
    write_png_gray16(stem + "_depth.png", depth_to_mm(masked_depth(out)));
    write_png_rgb8(stem + "_normal.png",
                   normal_to_image(normal_from_depth(masked_depth(out), a.intrinsics)));
  }
}

std::string EvalReport::to_json() const {
  json j;
  j["rendering"] = {{"psnr", mean_psnr}, {"ssim", mean_ssim}};
  j["mesh"] = {{"acc_cm", mesh.acc_cm},
               {"comp_cm", mesh.comp_cm},
               {"comp_ratio", mesh.comp_ratio},
               {"f_score", mesh.f_score}};
  json per_class = json::object();
  for (const auto& [cls, s] : semantic.per_class)
    per_class[std::to_string(cls)] = {{"iou", s.iou}, {"acc", s.recall},
                                      {"gt_count", s.gt_count}};
  j["semantic"] = {{"miou", semantic.miou}, {"fiou", semantic.fiou},
                   {"macc", semantic.macc}, {"facc", semantic.facc},
                   {"per_class", per_class}};
  return j.dump(2);
}

std::map<VoxelKey, std::uint32_t> gt_labels_from_frames(
    const std::vector<FrameBundle>& frames, const std::vector<LabelImage>& instance_images,
    const VoxelGrid& grid) {
  if (frames.size() != instance_images.size())
    throw DataError("gt_labels_from_frames: frames and instance images differ");
  std::map<VoxelKey, std::map<std::uint32_t, std::size_t>> votes;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const FrameBundle& f = frames[i];
    const LabelImage& ids = instance_images[i];
    for (int v = 0; v < f.intrinsics.height; ++v)
      for (int u = 0; u < f.intrinsics.width; ++u) {
        const std::uint32_t id = ids.at(v, u);
        if (id == 0) continue;
        const double d = f.depth.at(v, u);
        if (d <= 0) continue;
        const VoxelKey key = grid.world_to_voxel(f.pose.to_world(f.intrinsics.ray(u, v) * d));
        const Voxel* vox = grid.find(key);
        if (!vox || vox->tsdf_weight <= 0) continue;
        ++votes[key][id];
      }
  }
  std::map<VoxelKey, std::uint32_t> labels;
  for (const auto& [key, counts] : votes) {
    std::uint32_t best = 0;
    std::size_t best_n = 0;
    bool tie = false;
    for (const auto& [id, n] : counts) {
      if (n > best_n) {
        best = id;
        best_n = n;
        tie = false;
      } else if (n == best_n) {
        tie = true;
      }
    }
    if (!tie && best_n > 0) labels[key] = best;
  }
  return labels;
}

std::map<std::uint32_t, Eigen::VectorXd> class_embeddings_from_world(
    const SyntheticWorld& world) {
  std::map<std::uint32_t, Eigen::VectorXd> out;
  for (const auto& obj : world.objects) out[obj.instance_id] = obj.embedding;
  return out;
}

VoxelGrid fuse_frames(const std::vector<FrameBundle>& frames, double resolution,
                      double truncation) {
  VoxelGrid grid(resolution, truncation);
  for (const auto& f : frames) grid.integrate_tsdf(f);
  return grid;
}

EvalReport run_eval(const std::string& artifacts_dir, const std::string& eval_dir) {
  LoadedArtifacts a = load_artifacts(artifacts_dir, true);
  const fs::path d(artifacts_dir);
  fs::create_directories(eval_dir);
  EvalReport rep;

  // Rendering metrics at the training poses, identity camera model.
  std::vector<RenderOutput> renders;
  renders.reserve(a.poses.size());
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    renders.push_back(render(a.field.primitives, a.poses[i], a.intrinsics));
    rep.mean_psnr += psnr(renders.back().color, a.targets[i].color);
    rep.mean_ssim += ssim(renders.back().color, a.targets[i].color);
  }
  if (!a.poses.empty()) {
    rep.mean_psnr /= a.poses.size();
    rep.mean_ssim /= a.poses.size();
  }

  // Mesh protocol: rendered depth re-fused at 0.01 m against gt-depth fusion.
  const double mesh_res = 0.01;
  std::vector<FrameBundle> pred_frames = a.targets;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    pred_frames[i].color = renders[i].color;
    pred_frames[i].depth = masked_depth(renders[i]);
  }
  const VoxelGrid pred_grid = fuse_frames(pred_frames, mesh_res, 4 * mesh_res);
  const VoxelGrid gt_grid = fuse_frames(a.targets, mesh_res, 4 * mesh_res);
  const TriMesh pred_mesh = extract_mesh(pred_grid);
  const TriMesh gt_mesh = extract_mesh(gt_grid);
  MeshEvalConfig mesh_cfg;
  mesh_cfg.seed = a.cfg.seed;
  mesh_cfg.threshold = a.cfg.eval_mesh_threshold;
  mesh_cfg.samples = a.cfg.eval_mesh_samples;
  if (!pred_mesh.empty() && !gt_mesh.empty())
    rep.mesh = mesh_metrics(pred_mesh, gt_mesh, mesh_cfg);
  write_ply((fs::path(eval_dir) / "pred_mesh.ply").string(), pred_mesh);
  write_ply((fs::path(eval_dir) / "gt_mesh.ply").string(), gt_mesh);

  // Zero-shot semantics on the run's own grid.
  if (!fs::exists(d / "grid.ovxg") || !fs::exists(d / "codebook.ovcb"))
    throw DataError("artifacts missing grid/codebook in " + artifacts_dir);
  const VoxelGrid grid =
      VoxelGrid::load_snapshot((d / "grid.ovxg").string(),
                               a.cfg.truncation / a.cfg.voxel_resolution,
                               a.cfg.voxel_resolution);
  const InstanceCodebook codebook =
      InstanceCodebook::load((d / "codebook.ovcb").string());
  if (a.gt_instances.size() != a.targets.size() || a.class_embeddings.empty())
    throw DataError(
        "eval without ground truth: need gt instance images and class embeddings");
  const auto gt_labels = gt_labels_from_frames(a.targets, a.gt_instances, grid);
  if (gt_labels.empty()) throw DataError("eval: no ground-truth labels available");
  rep.semantic = zero_shot_segmentation(grid, codebook, a.class_embeddings, gt_labels);

  {
    std::ofstream f(fs::path(eval_dir) / "eval.json");
    f << rep.to_json() << "\n";
  }
  {
    std::ofstream f(fs::path(eval_dir) / "eval_tables.txt");
    f << "Rendering\n";
    f << "  PSNR " << rep.mean_psnr << " dB, SSIM " << rep.mean_ssim << "\n\n";
    f << mesh_report_table(rep.mesh, a.cfg.scene) << "\n";
    f << semantic_report_table(rep.semantic, a.cfg.scene);
  }
  return rep;
}

void run_synth(const PipelineConfig& cfg, const std::string& dataset_dir) {
  cfg.validate();
  SceneSpec spec =
      make_scene_by_name(cfg.scene, cfg.frames, cfg.image_size, cfg.embedding_dim, cfg.seed);
  DatasetWriter writer(dataset_dir, spec.intrinsics);
  for (std::size_t i = 0; i < spec.trajectory.size(); ++i) {
    RaycastResult rc = raycast_frame(spec.world, spec.trajectory[i], spec.intrinsics);
    rc.frame.timestamp = static_cast<int>(i);
    if (cfg.noise.depth_sigma > 0) {
      Rng rng(mix_seed(cfg.seed, 0xd0 + i));
      perturb_depth(rc.frame.depth, cfg.noise.depth_sigma, rng);
    }
    SegObservation obs = std::move(rc.observation);
    if (cfg.noise.p_drop > 0 || cfg.noise.p_split > 0 || cfg.noise.p_merge > 0 ||
        cfg.noise.embed_sigma > 0) {
      NoiseConfig frame_noise = cfg.noise;
      frame_noise.rng_seed = mix_seed(cfg.seed, 0x5e9 + i);
      obs = perturb_segmentation(obs, frame_noise);
    }
    writer.add_frame(rc.frame, obs, &rc.instance_ids);
  }
  writer.finish();

  // Class embeddings sidecar for downstream evaluation.
  json je = json::object();
  for (const auto& obj : spec.world.objects) {
    std::vector<double> v(obj.embedding.data(), obj.embedding.data() + obj.embedding.size());
    je[std::to_string(obj.instance_id)] = v;
  }
  fs::create_directories(fs::path(dataset_dir) / "gt");
  std::ofstream f(fs::path(dataset_dir) / "gt" / "class_embeddings.json");
  f << je.dump() << "\n";
}

}  // namespace omni
