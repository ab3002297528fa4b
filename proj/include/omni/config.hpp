#pragma once

#include <string>

#include "omni/frame.hpp"
#include "omni/gaussian_field.hpp"
#include "omni/instance_fusion.hpp"

namespace omni {

// Every tunable in one flat TOML-style document; defaults are the shipping
// values, and save() writes all of them so runs are self-describing.
struct PipelineConfig {
  // engine
  double voxel_resolution = 0.03;
  double truncation = 0.12;
  int embedding_dim = 64;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // source
  std::string source = "synthetic";  // "synthetic" | "replay"
  std::string input_manifest;
  std::string scene = "four-objects";
  int frames = 20;
  int image_size = 96;
  int erosion_radius = 1;

  FusionConfig fusion;
  KeyframePolicy keyframes;
  OptimConfig optimizer;
  NoiseConfig noise;

  // evaluation
  double eval_mesh_threshold = 0.05;  // meters, completion ratio / F-score
  int eval_mesh_samples = 10000;

  void validate() const;
  void save(const std::string& path) const;
  static PipelineConfig from_file(const std::string& path);
};

}  // namespace omni
