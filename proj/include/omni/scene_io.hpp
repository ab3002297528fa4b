#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "omni/frame.hpp"

namespace omni {

// Resolves mask overlaps in favor of the smaller mask, then erodes each mask
// with a square structuring element of the given radius. Empty results are
// dropped; `keep` reports which inputs survived so embeddings can follow.
std::vector<Mask> postprocess_masks(const std::vector<Mask>& raw_masks, int erosion_radius,
                                    std::vector<std::size_t>* keep = nullptr);

// Applies drop / split / merge to the masks and Gaussian jitter to the
// embeddings. Deterministic in cfg.rng_seed.
SegObservation perturb_segmentation(const SegObservation& obs, const NoiseConfig& cfg);

// Multiplicative depth noise on valid pixels: d *= 1 + sigma * N(0,1).
void perturb_depth(Image& depth, double sigma, Rng& rng);

// --- Replay dataset -----------------------------------------------------------

struct FrameRecord {
  FrameBundle frame;
  SegObservation observation;
};

// Streams a replay dataset: newline-delimited JSON manifest, one record per
// frame, with PNG images and a binary embedding file per frame. Intrinsics
// live in intrinsics.json next to the manifest.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& manifest_path);
  ~DatasetReader();
  DatasetReader(DatasetReader&&) noexcept;
  DatasetReader& operator=(DatasetReader&&) noexcept;

  std::size_t size() const;
  const Intrinsics& intrinsics() const;

  // Frames come back in ascending timestamp order.
  std::optional<FrameRecord> next();

  // Optional per-frame ground-truth instance image (gt sidecar), if present.
  std::optional<LabelImage> gt_instances(std::size_t index) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Writes the same layout DatasetReader consumes.
class DatasetWriter {
 public:
  DatasetWriter(const std::string& directory, const Intrinsics& intrinsics);
  ~DatasetWriter();

  void add_frame(const FrameBundle& frame, const SegObservation& obs,
                 const LabelImage* gt_instances = nullptr);
  // Flushes the manifest; called automatically on destruction.
  void finish();

  std::string manifest_path() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Embedding blob format shared by the replay dataset: u32 count, u32 dim,
// then count*dim little-endian float32.
void write_embeddings_file(const std::string& path,
                           const std::vector<Eigen::VectorXd>& embeddings);
std::vector<Eigen::VectorXd> read_embeddings_file(const std::string& path);

}  // namespace omni
