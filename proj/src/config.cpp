#include "omni/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace omni {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

class KvDocument {
 public:
  explicit KvDocument(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      values_[trim(line.substr(0, eq))] = unquote(trim(line.substr(eq + 1)));
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) const {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    std::istringstream ss(it->second);
    T v;
    if constexpr (std::is_same_v<T, bool>) {
      v = it->second == "true" || it->second == "1";
    } else if constexpr (std::is_same_v<T, std::string>) {
      v = it->second;
    } else {
      if (!(ss >> v)) throw ConfigError("config: cannot parse value for " + key);
    }
    out = v;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace

void PipelineConfig::validate() const {
  if (voxel_resolution <= 0) throw ConfigError("config: voxel_resolution must be positive");
  if (truncation < 2 * voxel_resolution)
    throw ConfigError("config: truncation must be at least 2x voxel_resolution");
  if (embedding_dim <= 0) throw ConfigError("config: embedding_dim must be positive");
  if (frames < 0) throw ConfigError("config: frames must be non-negative");
  if (image_size < 16) throw ConfigError("config: image_size must be at least 16");
  if (erosion_radius < 0) throw ConfigError("config: erosion_radius must be non-negative");
  if (eval_mesh_threshold <= 0 || eval_mesh_samples <= 0)
    throw ConfigError("config: mesh eval threshold and samples must be positive");
  if (source != "synthetic" && source != "replay")
    throw ConfigError("config: source must be synthetic or replay");
  if (source == "replay" && input_manifest.empty())
    throw ConfigError("config: replay source needs input_manifest");
  fusion.validate();
  keyframes.validate();
  optimizer.validate();
  noise.validate();
}

void PipelineConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config: " + path);
  f.precision(17);
  f << "# engine\n";
  f << "voxel_resolution = " << voxel_resolution << "\n";
  f << "truncation = " << truncation << "\n";
  f << "embedding_dim = " << embedding_dim << "\n";
  f << "seed = " << seed << "\n";
  f << "out_dir = \"" << out_dir << "\"\n";
  f << "\n# source\n";
  f << "source = \"" << source << "\"\n";
  f << "input_manifest = \"" << input_manifest << "\"\n";
  f << "scene = \"" << scene << "\"\n";
  f << "frames = " << frames << "\n";
  f << "image_size = " << image_size << "\n";
  f << "erosion_radius = " << erosion_radius << "\n";
  f << "\n# instance fusion\n";
  f << "fusion_xi = " << fusion.xi << "\n";
  f << "fusion_lambda_geo = " << fusion.lambda_geo << "\n";
  f << "fusion_counting = \""
    << (fusion.counting == CountingMode::kDirichlet ? "dirichlet" : "last-write-wins")
    << "\"\n";
  f << "\n# keyframes\n";
  f << "kf_tau_threshold = " << keyframes.tau_threshold << "\n";
  f << "kf_n_key = " << keyframes.n_key << "\n";
  f << "\n# optimizer\n";
  f << "opt_lr_color = " << optimizer.lr_color << "\n";
  f << "opt_lr_opacity = " << optimizer.lr_opacity << "\n";
  f << "opt_lr_camera = " << optimizer.lr_camera << "\n";
  f << "opt_lr_camera_trans = " << optimizer.lr_camera_trans << "\n";
  f << "opt_iters_per_frame = " << optimizer.iters_per_frame << "\n";
  f << "opt_warmup_iters = " << optimizer.warmup_iters << "\n";
  f << "opt_kf_sample = " << optimizer.kf_sample << "\n";
  f << "loss_w_rgb = " << optimizer.weights.rgb << "\n";
  f << "loss_w_ssim = " << optimizer.weights.ssim << "\n";
  f << "loss_w_depth = " << optimizer.weights.depth << "\n";
  f << "loss_w_normal = " << optimizer.weights.normal << "\n";
  f << "\n# evaluation\n";
  f << "eval_mesh_threshold = " << eval_mesh_threshold << "\n";
  f << "eval_mesh_samples = " << eval_mesh_samples << "\n";
  f << "\n# segmentation noise (synthetic mode)\n";
  f << "noise_p_drop = " << noise.p_drop << "\n";
  f << "noise_p_split = " << noise.p_split << "\n";
  f << "noise_p_merge = " << noise.p_merge << "\n";
  f << "noise_embed_sigma = " << noise.embed_sigma << "\n";
  f << "noise_depth_sigma = " << noise.depth_sigma << "\n";
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  const KvDocument doc(path);
  PipelineConfig c;
  doc.get("voxel_resolution", c.voxel_resolution);
  doc.get("truncation", c.truncation);
  doc.get("embedding_dim", c.embedding_dim);
  doc.get("seed", c.seed);
  doc.get("out_dir", c.out_dir);
  doc.get("source", c.source);
  doc.get("input_manifest", c.input_manifest);
  doc.get("scene", c.scene);
  doc.get("frames", c.frames);
  doc.get("image_size", c.image_size);
  doc.get("erosion_radius", c.erosion_radius);
  doc.get("fusion_xi", c.fusion.xi);
  doc.get("fusion_lambda_geo", c.fusion.lambda_geo);
  std::string counting = "dirichlet";
  doc.get("fusion_counting", counting);
  if (counting == "dirichlet")
    c.fusion.counting = CountingMode::kDirichlet;
  else if (counting == "last-write-wins")
    c.fusion.counting = CountingMode::kLastWriteWins;
  else
    throw ConfigError("config: unknown fusion_counting " + counting);
  doc.get("kf_tau_threshold", c.keyframes.tau_threshold);
  doc.get("kf_n_key", c.keyframes.n_key);
  doc.get("opt_lr_color", c.optimizer.lr_color);
  doc.get("opt_lr_opacity", c.optimizer.lr_opacity);
  doc.get("opt_lr_camera", c.optimizer.lr_camera);
  doc.get("opt_lr_camera_trans", c.optimizer.lr_camera_trans);
  doc.get("opt_iters_per_frame", c.optimizer.iters_per_frame);
  doc.get("opt_warmup_iters", c.optimizer.warmup_iters);
  doc.get("opt_kf_sample", c.optimizer.kf_sample);
  doc.get("loss_w_rgb", c.optimizer.weights.rgb);
  doc.get("loss_w_ssim", c.optimizer.weights.ssim);
  doc.get("loss_w_depth", c.optimizer.weights.depth);
  doc.get("loss_w_normal", c.optimizer.weights.normal);
  doc.get("eval_mesh_threshold", c.eval_mesh_threshold);
  doc.get("eval_mesh_samples", c.eval_mesh_samples);
  doc.get("noise_p_drop", c.noise.p_drop);
  doc.get("noise_p_split", c.noise.p_split);
  doc.get("noise_p_merge", c.noise.p_merge);
  doc.get("noise_embed_sigma", c.noise.embed_sigma);
  doc.get("noise_depth_sigma", c.noise.depth_sigma);
  c.validate();
  return c;
}

}  // namespace omni
