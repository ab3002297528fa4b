#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "omni/camera.hpp"
#include "omni/image.hpp"

namespace omni {

// One RGB-D observation. Depth in meters, 0 marks invalid samples.
struct FrameBundle {
  ColorImage color;
  Image depth;
  Pose pose;
  Intrinsics intrinsics;
  int timestamp = 0;

  void validate() const {
    intrinsics.validate();
    pose.validate();
    if (color.width() != intrinsics.width || color.height() != intrinsics.height ||
        depth.width() != intrinsics.width || depth.height() != intrinsics.height)
      throw DataError("frame " + std::to_string(timestamp) +
                      ": image dimensions do not match intrinsics");
  }
};

// Per-frame instance segmentation: disjoint masks with unit-norm embeddings.
struct SegObservation {
  std::vector<Mask> masks;
  std::vector<Eigen::VectorXd> embeddings;
  std::vector<std::string> captions;  // opaque, optional

  std::size_t size() const { return masks.size(); }
};

// Controlled corruption of a segmentation stream.
struct NoiseConfig {
  double p_drop = 0.0;
  double p_split = 0.0;
  double p_merge = 0.0;
  double embed_sigma = 0.0;
  double depth_sigma = 0.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_drop) || !prob(p_split) || !prob(p_merge))
      throw ConfigError("noise: probabilities must lie in [0,1]");
    if (embed_sigma < 0 || depth_sigma < 0)
      throw ConfigError("noise: sigmas must be non-negative");
  }
};

}  // namespace omni
