#include "omni/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace omni {

double psnr(const Image& a, const Image& b) {
  if (!a.same_size(b)) throw DataError("psnr: image dimensions differ");
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double psnr(const ColorImage& a, const ColorImage& b) {
  if (!a.same_size(b)) throw DataError("psnr: image dimensions differ");
  double mse = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < a.r.size(); ++i) {
      const double d = a.channel(c).data()[i] - b.channel(c).data()[i];
      mse += d * d;
    }
  mse /= static_cast<double>(3 * a.r.size());
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// --- Point-triangle distance (Eberly's region decomposition) ------------------------

namespace {

double point_triangle_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                               const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - a).norm();

  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - b).norm();

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }

  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - c).norm();

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double t = d2 / (d2 - d6);
    return (p - (a + t * ac)).norm();
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + t * (c - b))).norm();
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, t = vc * denom;
  return (p - (a + ab * v + ac * t)).norm();
}

double box_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& lo,
                    const Eigen::Vector3d& hi) {
  double d2 = 0;
  for (int i = 0; i < 3; ++i) {
    const double d = std::max({lo[i] - p[i], 0.0, p[i] - hi[i]});
    d2 += d * d;
  }
  return std::sqrt(d2);
}

}  // namespace

MeshDistanceQuery::MeshDistanceQuery(const TriMesh& mesh) : mesh_(mesh) {
  if (mesh.empty()) throw DataError("mesh distance query: empty mesh");
  tri_order_.resize(mesh.faces.size());
  std::iota(tri_order_.begin(), tri_order_.end(), 0);
  std::vector<Eigen::Vector3d> centroids(mesh.faces.size());
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    centroids[i] =
        (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
  }
  nodes_.reserve(2 * mesh.faces.size());
  build(0, static_cast<int>(mesh.faces.size()), centroids);
}

int MeshDistanceQuery::build(int first, int count, std::vector<Eigen::Vector3d>& centroids) {
  Node node;
  node.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int i = first; i < first + count; ++i) {
    const auto& f = mesh_.faces[tri_order_[i]];
    for (int k = 0; k < 3; ++k) {
      node.lo = node.lo.cwiseMin(mesh_.vertices[f[k]]);
      node.hi = node.hi.cwiseMax(mesh_.vertices[f[k]]);
    }
  }
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (count <= 8) {
    nodes_[index].first = first;
    nodes_[index].count = count;
    return index;
  }
  int axis = 0;
  const Eigen::Vector3d ext = node.hi - node.lo;
  if (ext.y() > ext.x()) axis = 1;
  if (ext.z() > ext[axis]) axis = 2;
  const int mid = first + count / 2;
  std::nth_element(tri_order_.begin() + first, tri_order_.begin() + mid,
                   tri_order_.begin() + first + count, [&](int a, int b) {
                     return centroids[a][axis] < centroids[b][axis];
                   });
  const int left = build(first, mid - first, centroids);
  const int right = build(mid, first + count - mid, centroids);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

double MeshDistanceQuery::distance(const Eigen::Vector3d& p) const {
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int ni = stack.back();
    stack.pop_back();
    const Node& n = nodes_[ni];
    if (box_distance(p, n.lo, n.hi) >= best) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const auto& f = mesh_.faces[tri_order_[i]];
        best = std::min(best, point_triangle_distance(p, mesh_.vertices[f[0]],
                                                      mesh_.vertices[f[1]],
                                                      mesh_.vertices[f[2]]));
      }
      continue;
    }
    // Visit the nearer child first.
    const double dl = box_distance(p, nodes_[n.left].lo, nodes_[n.left].hi);
    const double dr = box_distance(p, nodes_[n.right].lo, nodes_[n.right].hi);
    if (dl < dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return best;
}

std::vector<Eigen::Vector3d> sample_mesh_surface(const TriMesh& mesh, int count,
                                                 std::uint64_t seed) {
  if (mesh.empty()) throw DataError("sample_mesh_surface: empty mesh");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    const Eigen::Vector3d e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
    const Eigen::Vector3d e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
    total += 0.5 * e1.cross(e2).norm();
    cumulative[i] = total;
  }
  if (total <= 0) throw DataError("sample_mesh_surface: degenerate mesh");

  Rng rng(seed);
  std::vector<Eigen::Vector3d> points;
  points.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double target = rng.uniform() * total;
    const std::size_t fi = std::lower_bound(cumulative.begin(), cumulative.end(), target) -
                           cumulative.begin();
    const auto& f = mesh.faces[std::min(fi, mesh.faces.size() - 1)];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    points.push_back((1 - r1) * mesh.vertices[f[0]] + r1 * (1 - r2) * mesh.vertices[f[1]] +
                     r1 * r2 * mesh.vertices[f[2]]);
  }
  return points;
}

MeshMetrics mesh_metrics(const TriMesh& pred, const TriMesh& gt, const MeshEvalConfig& cfg) {
  cfg.validate();
  if (pred.empty() || gt.empty()) throw DataError("mesh_metrics: empty mesh");

  const MeshDistanceQuery to_gt(gt);
  const MeshDistanceQuery to_pred(pred);
  const auto pred_samples = sample_mesh_surface(pred, cfg.samples, mix_seed(cfg.seed, 1));
  const auto gt_samples = sample_mesh_surface(gt, cfg.samples, mix_seed(cfg.seed, 2));

  MeshMetrics m;
  std::size_t pred_within = 0, gt_within = 0;
  for (const auto& p : pred_samples) {
    const double d = to_gt.distance(p);
    m.acc_cm += d;
    if (d <= cfg.threshold) ++pred_within;
  }
  for (const auto& p : gt_samples) {
    const double d = to_pred.distance(p);
    m.comp_cm += d;
    if (d <= cfg.threshold) ++gt_within;
  }
  m.acc_cm = m.acc_cm / pred_samples.size() * 100.0;
  m.comp_cm = m.comp_cm / gt_samples.size() * 100.0;
  m.comp_ratio = static_cast<double>(gt_within) / gt_samples.size();
  const double precision = static_cast<double>(pred_within) / pred_samples.size();
  const double recall = m.comp_ratio;
  m.f_score = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  return m;
}

// --- Zero-shot semantic evaluation ---------------------------------------------------

SemanticEvalReport zero_shot_segmentation(
    const VoxelGrid& grid, const InstanceCodebook& codebook,
    const std::map<std::uint32_t, Eigen::VectorXd>& class_embeddings,
    const std::map<VoxelKey, std::uint32_t>& gt_labels) {
  if (codebook.size() == 0) throw DataError("zero_shot_segmentation: empty codebook");

  // Classify each instance once.
  std::map<std::uint64_t, std::uint32_t> instance_class;
  for (const auto& [id, entry] : codebook.entries()) {
    std::uint32_t best_class = 0;
    double best = -2;
    for (const auto& [cls, emb] : class_embeddings) {
      const double s = entry.embedding.dot(emb);
      if (s > best) {
        best = s;
        best_class = cls;
      }
    }
    instance_class[id] = best_class;
  }

  // Confusion over gt-labeled voxels; prediction 0 = no instance (miss).
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> confusion;
  for (const auto& [key, gt_class] : gt_labels) {
    std::uint32_t pred = 0;
    if (const auto inst = grid.label_query(key)) pred = instance_class.at(*inst);
    ++confusion[{gt_class, pred}];
  }

  SemanticEvalReport rep;
  std::map<std::uint32_t, std::size_t> gt_count, pred_count, tp;
  std::size_t total = 0;
  for (const auto& [gp, n] : confusion) {
    gt_count[gp.first] += n;
    if (gp.second != 0) pred_count[gp.second] += n;
    if (gp.first == gp.second) tp[gp.first] += n;
    total += n;
  }
  if (total == 0) return rep;

  double miou = 0, fiou = 0, macc = 0, facc = 0;
  std::size_t n_classes = 0;
  for (const auto& [cls, n_gt] : gt_count) {
    const std::size_t t = tp.count(cls) ? tp[cls] : 0;
    const std::size_t fp = (pred_count.count(cls) ? pred_count[cls] : 0) - t;
    const std::size_t fn = n_gt - t;
    ClassScore s;
    s.gt_count = n_gt;
    s.iou = (t + fp + fn) ? static_cast<double>(t) / (t + fp + fn) : 0.0;
    s.recall = n_gt ? static_cast<double>(t) / n_gt : 0.0;
    rep.per_class[cls] = s;
    const double freq = static_cast<double>(n_gt) / total;
    miou += s.iou;
    fiou += freq * s.iou;
    macc += s.recall;
    facc += freq * s.recall;
    ++n_classes;
  }
  rep.miou = miou / n_classes;
  rep.fiou = fiou;
  rep.macc = macc / n_classes;
  rep.facc = facc;
  return rep;
}

std::string semantic_report_table(const SemanticEvalReport& r, const std::string& scene) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(10) << "Metric" << std::right << std::setw(12) << scene
     << std::setw(12) << "Avg." << "\n";
  auto row = [&](const char* name, double v) {
    os << std::left << std::setw(10) << name << std::right << std::setw(12) << v * 100.0
       << std::setw(12) << v * 100.0 << "\n";
  };
  row("mIoU", r.miou);
  row("fIoU", r.fiou);
  row("mAcc", r.macc);
  row("fAcc", r.facc);
  return os.str();
}

std::string mesh_report_table(const MeshMetrics& m, const std::string& scene) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(12) << "Metric" << std::right << std::setw(12) << scene
     << std::setw(12) << "Avg." << "\n";
  auto row = [&](const char* name, double v) {
    os << std::left << std::setw(12) << name << std::right << std::setw(12) << v
       << std::setw(12) << v << "\n";
  };
  row("Acc.(cm)", m.acc_cm);
  row("Comp.(cm)", m.comp_cm);
  row("Comp.Rat.", m.comp_ratio * 100.0);
  row("F-Score", m.f_score * 100.0);
  return os.str();
}

}  // namespace omni
