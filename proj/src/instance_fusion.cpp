#include "omni/instance_fusion.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace omni {

std::uint64_t InstanceCodebook::allocate(const Eigen::VectorXd& embedding) {
  const double n = embedding.norm();
  if (n < 1e-12) throw DataError("codebook: cannot seed a zero embedding");
  const std::uint64_t id = next_id_++;
  entries_[id] = Entry{embedding / n, 0.0};
  return id;
}

const InstanceCodebook::Entry& InstanceCodebook::entry(std::uint64_t id) const {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw DataError("codebook: unknown instance " + std::to_string(id));
  return it->second;
}

InstanceCodebook::Entry& InstanceCodebook::entry(std::uint64_t id) {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw DataError("codebook: unknown instance " + std::to_string(id));
  return it->second;
}

void InstanceCodebook::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open codebook for writing: " + path);
  f.write("OVCB", 4);
  const std::uint32_t version = 1;
  const std::uint32_t dim =
      entries_.empty() ? 0 : static_cast<std::uint32_t>(entries_.begin()->second.embedding.size());
  const std::uint32_t count = static_cast<std::uint32_t>(entries_.size());
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&dim), 4);
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [id, e] : entries_) {  // std::map iterates in ascending id order
    f.write(reinterpret_cast<const char*>(&id), 8);
    const float w = static_cast<float>(e.weight);
    f.write(reinterpret_cast<const char*>(&w), 4);
    for (int i = 0; i < e.embedding.size(); ++i) {
      const float v = static_cast<float>(e.embedding[i]);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

InstanceCodebook InstanceCodebook::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open codebook: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "OVCB", 4) != 0) throw DataError("bad codebook magic: " + path);
  std::uint32_t version = 0, dim = 0, count = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&dim), 4);
  f.read(reinterpret_cast<char*>(&count), 4);
  if (version != 1) throw DataError("unsupported codebook version: " + path);

  InstanceCodebook cb;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint64_t id = 0;
    float w = 0;
    f.read(reinterpret_cast<char*>(&id), 8);
    f.read(reinterpret_cast<char*>(&w), 4);
    Entry e;
    e.weight = w;
    e.embedding.resize(dim);
    for (std::uint32_t d = 0; d < dim; ++d) {
      float v = 0;
      f.read(reinterpret_cast<char*>(&v), 4);
      e.embedding[d] = v;
    }
    if (!f) throw DataError("truncated codebook: " + path);
    cb.entries_[id] = std::move(e);
    cb.next_id_ = std::max(cb.next_id_, id + 1);
  }
  return cb;
}

double geometric_similarity(std::span<const VoxelKey> voxels, std::uint64_t gamma,
                            const VoxelGrid& grid) {
  if (voxels.empty()) throw DataError("geometric_similarity: empty voxel region");
  double sum = 0;
  for (const VoxelKey& key : voxels) {
    const Voxel* v = grid.find(key);
    if (!v) continue;
    const std::uint64_t total = v->total_alpha();
    if (total == 0) continue;
    sum += static_cast<double>(v->count_of(gamma)) / static_cast<double>(total);
  }
  return sum / static_cast<double>(voxels.size());
}

double embedding_similarity(const Eigen::VectorXd& f_map, const Eigen::VectorXd& f_obs) {
  if (f_map.norm() < 1e-12 || f_obs.norm() < 1e-12)
    throw DataError("embedding_similarity: zero vector");
  if (f_map.size() != f_obs.size())
    throw DataError("embedding_similarity: dimension mismatch");
  return f_map.dot(f_obs);
}

std::vector<AssociationResult> associate(const SegObservation& obs, const FrameBundle& frame,
                                         const VoxelGrid& grid, InstanceCodebook& codebook,
                                         const FusionConfig& cfg) {
  cfg.validate();
  std::vector<AssociationResult> results;
  results.reserve(obs.masks.size());

  for (std::size_t k = 0; k < obs.masks.size(); ++k) {
    AssociationResult r;
    r.mask_index = k;
    r.voxels = grid.mask_to_voxels(obs.masks[k], frame.depth, frame.pose, frame.intrinsics);
    if (r.voxels.empty()) {
      r.skipped = true;
      results.push_back(std::move(r));
      continue;
    }

    // Candidates: instances with evidence anywhere inside the region.
    std::set<std::uint64_t> candidates;
    for (const VoxelKey& key : r.voxels) {
      const Voxel* v = grid.find(key);
      if (!v) continue;
      for (const auto& [id, n] : v->alpha)
        if (n > 0) candidates.insert(id);
    }

    std::uint64_t best_id = 0;
    double best_score = -1;
    for (std::uint64_t gamma : candidates) {
      const double s_geo = geometric_similarity(r.voxels, gamma, grid);
      const double s_emb =
          std::max(0.0, embedding_similarity(codebook.entry(gamma).embedding,
                                             obs.embeddings[k]));
      const double score = cfg.lambda_geo * s_geo + (1.0 - cfg.lambda_geo) * s_emb;
      if (score > best_score) {  // set iteration is ascending, ties keep smallest id
        best_score = score;
        best_id = gamma;
      }
    }

    if (best_score > cfg.xi) {
      r.id = best_id;
      r.score = best_score;
      r.is_new = false;
    } else {
      r.id = codebook.allocate(obs.embeddings[k]);
      r.score = 1.0;
      r.is_new = true;
    }
    results.push_back(std::move(r));
  }
  return results;
}

double visibility_ratio(const AssociationResult& result, const VoxelGrid& grid) {
  std::size_t instance_size = 0;
  grid.for_each_voxel([&](const VoxelKey&, const Voxel& v) {
    if (v.alpha.empty()) return;
    std::uint64_t best_id = 0;
    std::uint32_t best_n = 0;
    for (const auto& [id, n] : v.alpha)
      if (n > best_n) {
        best_n = n;
        best_id = id;
      }
    if (best_n > 0 && best_id == result.id) ++instance_size;
  });
  if (instance_size == 0) return 1.0;  // first observation of this instance
  const double r = static_cast<double>(result.voxels.size()) /
                   static_cast<double>(instance_size);
  return std::min(r, 1.0);
}

std::vector<double> visibility_ratios(std::span<const AssociationResult> results,
                                      const VoxelGrid& grid) {
  // One sweep over the grid computes every instance's argmax-labeled size.
  std::map<std::uint64_t, std::size_t> sizes;
  grid.for_each_voxel([&](const VoxelKey&, const Voxel& v) {
    if (v.alpha.empty()) return;
    std::uint64_t best_id = 0;
    std::uint32_t best_n = 0;
    for (const auto& [id, n] : v.alpha)
      if (n > best_n) {
        best_n = n;
        best_id = id;
      }
    if (best_n > 0) ++sizes[best_id];
  });

  std::vector<double> out;
  out.reserve(results.size());
  for (const auto& r : results) {
    if (r.skipped) {
      out.push_back(0.0);
      continue;
    }
    auto it = sizes.find(r.id);
    if (it == sizes.end() || it->second == 0) {
      out.push_back(1.0);
      continue;
    }
    out.push_back(std::min(
        static_cast<double>(r.voxels.size()) / static_cast<double>(it->second), 1.0));
  }
  return out;
}

void update_voxels(std::span<const AssociationResult> results, VoxelGrid& grid,
                   CountingMode mode) {
  for (const auto& r : results) {
    if (r.skipped) continue;
    for (const VoxelKey& key : r.voxels) {
      Voxel& v = grid.at_or_create(key);
      if (mode == CountingMode::kLastWriteWins) {
        v.alpha.clear();
        v.alpha.emplace_back(r.id, 1);
        continue;
      }
      auto it = std::lower_bound(
          v.alpha.begin(), v.alpha.end(), r.id,
          [](const auto& p, std::uint64_t id) { return p.first < id; });
      if (it != v.alpha.end() && it->first == r.id)
        ++it->second;
      else
        v.alpha.insert(it, {r.id, 1});
    }
  }
}

void update_codebook(std::span<const AssociationResult> results, const SegObservation& obs,
                     std::span<const double> ratios, InstanceCodebook& codebook) {
  if (results.size() != ratios.size())
    throw DataError("update_codebook: results/ratios size mismatch");
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.skipped) continue;
    const double w = r.score * ratios[i];  // credibility of this observation
    auto& e = codebook.entry(r.id);
    const double W = e.weight;
    if (W + w < 1e-12) continue;
    Eigen::VectorXd f = (W * e.embedding + w * obs.embeddings[r.mask_index]) / (W + w);
    const double n = f.norm();
    if (n > 1e-12) e.embedding = f / n;
    e.weight = W + w;
  }
}

std::pair<std::uint64_t, double> retrieve_instance(const Eigen::VectorXd& query,
                                                   const InstanceCodebook& codebook) {
  if (codebook.size() == 0) throw DataError("retrieve_instance: empty codebook");
  std::uint64_t best_id = 0;
  double best = -2;
  for (const auto& [id, e] : codebook.entries()) {
    const double s = embedding_similarity(e.embedding, query);
    if (s > best) {
      best = s;
      best_id = id;
    }
  }
  return {best_id, best};
}

std::string association_log_line(int t, const AssociationResult& r) {
  nlohmann::json j;
  j["t"] = t;
  j["k"] = r.mask_index;
  j["id"] = r.skipped ? 0 : r.id;
  j["score"] = r.score;
  j["new"] = r.is_new;
  j["n_voxels"] = r.voxels.size();
  if (r.skipped) j["skipped"] = true;
  return j.dump();
}

}  // namespace omni
