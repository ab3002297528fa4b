#include "omni/scene_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "omni/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace omni {

// --- Mask post-processing ------------------------------------------------------

namespace {

Mask erode(const Mask& m, int radius) {
  if (radius <= 0) return m;
  const int w = m.width(), h = m.height();
  Mask out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m.get(y, x)) continue;
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy)
        for (int dx = -radius; dx <= radius && keep; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w || !m.get(ny, nx)) keep = false;
        }
      if (keep) out.set(y, x, true);
    }
  }
  return out;
}

struct BBox {
  int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  bool valid() const { return x1 >= x0; }
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool intersects(const BBox& o) const {
    return valid() && o.valid() && x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
  }
};

BBox bbox_of(const Mask& m) {
  BBox b;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.get(y, x)) {
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
      }
  return b;
}

}  // namespace

std::vector<Mask> postprocess_masks(const std::vector<Mask>& raw_masks, int erosion_radius,
                                    std::vector<std::size_t>* keep) {
  if (keep) keep->clear();
  if (raw_masks.empty()) return {};
  const int w = raw_masks[0].width(), h = raw_masks[0].height();
  for (const auto& m : raw_masks)
    if (m.width() != w || m.height() != h)
      throw DataError("postprocess_masks: masks differ in size");

  // Smaller masks claim overlapping pixels first.
  std::vector<std::size_t> order(raw_masks.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> areas(raw_masks.size());
  for (std::size_t i = 0; i < raw_masks.size(); ++i) areas[i] = raw_masks[i].count();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return areas[a] < areas[b]; });

  std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t i = order[rank];
    const auto& m = raw_masks[i];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        auto& o = owner[static_cast<std::size_t>(y) * w + x];
        if (m.get(y, x) && o < 0) o = static_cast<int>(i);
      }
  }

  std::vector<Mask> out;
  for (std::size_t i = 0; i < raw_masks.size(); ++i) {
    Mask m(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (owner[static_cast<std::size_t>(y) * w + x] == static_cast<int>(i))
          m.set(y, x, true);
    m = erode(m, erosion_radius);
    if (m.count() == 0) continue;
    out.push_back(std::move(m));
    if (keep) keep->push_back(i);
  }
  return out;
}

// --- Segmentation noise ---------------------------------------------------------

SegObservation perturb_segmentation(const SegObservation& obs, const NoiseConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.rng_seed);

  struct Item {
    Mask mask;
    Eigen::VectorXd emb;
    std::string caption;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < obs.masks.size(); ++i) {
    if (rng.uniform() < cfg.p_drop) continue;
    Item it;
    it.mask = obs.masks[i];
    it.emb = obs.embeddings[i];
    it.caption = i < obs.captions.size() ? obs.captions[i] : std::string();
    items.push_back(std::move(it));
  }

  // Split along the longer bounding-box axis.
  std::vector<Item> split_items;
  for (auto& it : items) {
    if (rng.uniform() >= cfg.p_split) {
      split_items.push_back(std::move(it));
      continue;
    }
    const BBox b = bbox_of(it.mask);
    Mask a(it.mask.width(), it.mask.height());
    Mask c(it.mask.width(), it.mask.height());
    const bool split_x = b.width() >= b.height();
    const int mid = split_x ? b.x0 + b.width() / 2 : b.y0 + b.height() / 2;
    for (int y = 0; y < it.mask.height(); ++y)
      for (int x = 0; x < it.mask.width(); ++x) {
        if (!it.mask.get(y, x)) continue;
        const bool first = split_x ? x < mid : y < mid;
        (first ? a : c).set(y, x, true);
      }
    if (a.count() == 0 || c.count() == 0) {
      split_items.push_back(std::move(it));
      continue;
    }
    split_items.push_back(Item{std::move(a), it.emb, it.caption});
    split_items.push_back(Item{std::move(c), it.emb, it.caption});
  }
  items = std::move(split_items);

  // Merge pairs whose bounding boxes intersect.
  if (cfg.p_merge > 0 && items.size() >= 2) {
    std::vector<BBox> boxes(items.size());
    std::vector<bool> gone(items.size(), false);
    for (std::size_t i = 0; i < items.size(); ++i) boxes[i] = bbox_of(items[i].mask);
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (gone[i]) continue;
      for (std::size_t j = i + 1; j < items.size(); ++j) {
        if (gone[j] || !boxes[i].intersects(boxes[j])) continue;
        if (rng.uniform() >= cfg.p_merge) continue;
        for (int y = 0; y < items[i].mask.height(); ++y)
          for (int x = 0; x < items[i].mask.width(); ++x)
            if (items[j].mask.get(y, x)) items[i].mask.set(y, x, true);
        items[i].emb = (items[i].emb + items[j].emb).normalized();
        boxes[i] = bbox_of(items[i].mask);
        gone[j] = true;
      }
    }
    std::vector<Item> merged;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!gone[i]) merged.push_back(std::move(items[i]));
    items = std::move(merged);
  }

  SegObservation out;
  for (auto& it : items) {
    Eigen::VectorXd e = it.emb;
    if (cfg.embed_sigma > 0) {
      for (int d = 0; d < e.size(); ++d) e[d] += cfg.embed_sigma * rng.normal();
      const double n = e.norm();
      e = n > 1e-12 ? Eigen::VectorXd(e / n) : it.emb;
    }
    out.masks.push_back(std::move(it.mask));
    out.embeddings.push_back(std::move(e));
    out.captions.push_back(std::move(it.caption));
  }
  return out;
}

void perturb_depth(Image& depth, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  for (auto& d : depth.data()) {
    if (d <= 0) continue;
    d = std::max(0.0, d * (1.0 + sigma * rng.normal()));
  }
}

// --- Embedding blobs -------------------------------------------------------------

void write_embeddings_file(const std::string& path,
                           const std::vector<Eigen::VectorXd>& embeddings) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open embeddings file for writing: " + path);
  const std::uint32_t count = static_cast<std::uint32_t>(embeddings.size());
  const std::uint32_t dim =
      embeddings.empty() ? 0 : static_cast<std::uint32_t>(embeddings[0].size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  f.write(reinterpret_cast<const char*>(&dim), 4);
  for (const auto& e : embeddings) {
    if (static_cast<std::uint32_t>(e.size()) != dim)
      throw DataError("embeddings differ in dimension: " + path);
    for (int i = 0; i < e.size(); ++i) {
      const float v = static_cast<float>(e[i]);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

std::vector<Eigen::VectorXd> read_embeddings_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open embeddings file: " + path);
  std::uint32_t count = 0, dim = 0;
  f.read(reinterpret_cast<char*>(&count), 4);
  f.read(reinterpret_cast<char*>(&dim), 4);
  if (!f) throw DataError("truncated embeddings header: " + path);
  std::vector<Eigen::VectorXd> out(count, Eigen::VectorXd(dim));
  for (auto& e : out)
    for (std::uint32_t i = 0; i < dim; ++i) {
      float v = 0;
      f.read(reinterpret_cast<char*>(&v), 4);
      if (!f) throw DataError("truncated embeddings data: " + path);
      e[i] = v;
    }
  return out;
}

// --- Dataset reader ----------------------------------------------------------------

namespace {

struct ManifestEntry {
  int t = 0;
  std::string color, depth, masks, embeddings;
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
};

}  // namespace

struct DatasetReader::Impl {
  fs::path dir;
  Intrinsics intrinsics;
  std::vector<ManifestEntry> entries;
  std::size_t cursor = 0;
};

DatasetReader::DatasetReader(const std::string& manifest_path)
    : impl_(std::make_unique<Impl>()) {
  const fs::path mp(manifest_path);
  if (!fs::exists(mp)) throw DataError("manifest not found: " + manifest_path);
  impl_->dir = mp.parent_path();

  const fs::path ip = impl_->dir / "intrinsics.json";
  if (!fs::exists(ip)) throw DataError("intrinsics.json not found next to " + manifest_path);
  std::ifstream intr_file(ip);
  json j = json::parse(intr_file);
  impl_->intrinsics.fx = j.at("fx").get<double>();
  impl_->intrinsics.fy = j.at("fy").get<double>();
  impl_->intrinsics.cx = j.at("cx").get<double>();
  impl_->intrinsics.cy = j.at("cy").get<double>();
  impl_->intrinsics.width = j.at("width").get<int>();
  impl_->intrinsics.height = j.at("height").get<int>();
  impl_->intrinsics.validate();

  std::ifstream mf(mp);
  std::string line;
  int lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    ManifestEntry e;
    e.t = r.at("t").get<int>();
    e.color = r.at("color").get<std::string>();
    e.depth = r.at("depth").get<std::string>();
    e.masks = r.at("masks").get<std::string>();
    e.embeddings = r.at("embeddings").get<std::string>();
    const auto pose = r.at("pose");
    if (pose.size() != 16)
      throw DataError("frame " + std::to_string(e.t) + ": pose must hold 16 floats");
    for (int i = 0; i < 16; ++i) e.pose(i / 4, i % 4) = pose[i].get<double>();
    impl_->entries.push_back(std::move(e));
  }
  std::stable_sort(impl_->entries.begin(), impl_->entries.end(),
                   [](const ManifestEntry& a, const ManifestEntry& b) { return a.t < b.t; });
}

DatasetReader::~DatasetReader() = default;
DatasetReader::DatasetReader(DatasetReader&&) noexcept = default;
DatasetReader& DatasetReader::operator=(DatasetReader&&) noexcept = default;

std::size_t DatasetReader::size() const { return impl_->entries.size(); }
const Intrinsics& DatasetReader::intrinsics() const { return impl_->intrinsics; }

std::optional<FrameRecord> DatasetReader::next() {
  if (impl_->cursor >= impl_->entries.size()) return std::nullopt;
  const ManifestEntry& e = impl_->entries[impl_->cursor++];
  const std::string tag = "frame " + std::to_string(e.t);

  auto resolve = [&](const std::string& rel) { return (impl_->dir / rel).string(); };
  for (const std::string& p : {e.color, e.depth, e.masks, e.embeddings})
    if (!fs::exists(impl_->dir / p)) throw DataError(tag + ": missing file " + p);

  FrameRecord rec;
  rec.frame.timestamp = e.t;
  rec.frame.color = read_png_rgb8(resolve(e.color));
  rec.frame.pose = Pose::from_matrix(e.pose);

  const LabelImage depth_mm = read_png_gray16(resolve(e.depth));
  rec.frame.depth = Image(depth_mm.width(), depth_mm.height());
  for (int y = 0; y < depth_mm.height(); ++y)
    for (int x = 0; x < depth_mm.width(); ++x)
      rec.frame.depth.at(y, x) = depth_mm.at(y, x) / 1000.0;

  rec.frame.intrinsics = impl_->intrinsics;
  rec.frame.validate();

  const LabelImage mask_img = read_png_gray16(resolve(e.masks));
  if (mask_img.width() != impl_->intrinsics.width ||
      mask_img.height() != impl_->intrinsics.height)
    throw DataError(tag + ": mask image dimensions do not match intrinsics");
  std::uint32_t max_index = 0;
  for (auto v : mask_img.data()) max_index = std::max(max_index, v);
  std::vector<Mask> masks(max_index, Mask(mask_img.width(), mask_img.height()));
  for (int y = 0; y < mask_img.height(); ++y)
    for (int x = 0; x < mask_img.width(); ++x) {
      const std::uint32_t v = mask_img.at(y, x);
      if (v > 0) masks[v - 1].set(y, x, true);
    }

  auto embeddings = read_embeddings_file(resolve(e.embeddings));
  if (embeddings.size() != masks.size())
    throw DataError(tag + ": " + std::to_string(masks.size()) + " masks but " +
                    std::to_string(embeddings.size()) + " embeddings");
  const int dim = embeddings.empty() ? 0 : static_cast<int>(embeddings[0].size());
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    if (embeddings[k].size() != dim)
      throw DataError(tag + ", mask " + std::to_string(k) + ": embedding dimension mismatch");
    const double n = embeddings[k].norm();
    if (n < 1e-9)
      throw DataError(tag + ", mask " + std::to_string(k) + ": zero embedding");
    embeddings[k] /= n;
  }

  // Indexed PNG masks are disjoint by construction; drop empty indices.
  for (std::size_t k = 0; k < masks.size(); ++k) {
    if (masks[k].count() == 0) continue;
    rec.observation.masks.push_back(std::move(masks[k]));
    rec.observation.embeddings.push_back(std::move(embeddings[k]));
  }
  return rec;
}

std::optional<LabelImage> DatasetReader::gt_instances(std::size_t index) const {
  if (index >= impl_->entries.size()) return std::nullopt;
  const fs::path p =
      impl_->dir / "gt" / ("instances_" + std::to_string(impl_->entries[index].t) + ".png");
  if (!fs::exists(p)) return std::nullopt;
  return read_png_gray16(p.string());
}

// --- Dataset writer ----------------------------------------------------------------

struct DatasetWriter::Impl {
  fs::path dir;
  Intrinsics intrinsics;
  std::vector<json> records;
  bool finished = false;
};

DatasetWriter::DatasetWriter(const std::string& directory, const Intrinsics& intrinsics)
    : impl_(std::make_unique<Impl>()) {
  impl_->dir = directory;
  impl_->intrinsics = intrinsics;
  fs::create_directories(impl_->dir / "frames");

  json j;
  j["fx"] = intrinsics.fx;
  j["fy"] = intrinsics.fy;
  j["cx"] = intrinsics.cx;
  j["cy"] = intrinsics.cy;
  j["width"] = intrinsics.width;
  j["height"] = intrinsics.height;
  std::ofstream f(impl_->dir / "intrinsics.json");
  f << j.dump(2) << "\n";
}

DatasetWriter::~DatasetWriter() {
  try {
    finish();
  } catch (...) {
  }
}

void DatasetWriter::add_frame(const FrameBundle& frame, const SegObservation& obs,
                              const LabelImage* gt_instances) {
  const std::string stem = "frames/" + std::to_string(frame.timestamp);
  write_png_rgb8((impl_->dir / (stem + "_color.png")).string(), frame.color);

  LabelImage depth_mm(frame.depth.width(), frame.depth.height());
  for (int y = 0; y < frame.depth.height(); ++y)
    for (int x = 0; x < frame.depth.width(); ++x) {
      const double mm = frame.depth.at(y, x) * 1000.0 + 0.5;
      depth_mm.at(y, x) = mm <= 0 ? 0 : static_cast<std::uint32_t>(std::min(mm, 65535.0));
    }
  write_png_gray16((impl_->dir / (stem + "_depth.png")).string(), depth_mm);

  LabelImage mask_img(frame.depth.width(), frame.depth.height());
  for (std::size_t k = 0; k < obs.masks.size(); ++k)
    for (int y = 0; y < mask_img.height(); ++y)
      for (int x = 0; x < mask_img.width(); ++x)
        if (obs.masks[k].get(y, x)) mask_img.at(y, x) = static_cast<std::uint32_t>(k + 1);
  write_png_gray16((impl_->dir / (stem + "_masks.png")).string(), mask_img);

  write_embeddings_file((impl_->dir / (stem + "_embeddings.bin")).string(), obs.embeddings);

  if (gt_instances) {
    fs::create_directories(impl_->dir / "gt");
    write_png_gray16(
        (impl_->dir / "gt" / ("instances_" + std::to_string(frame.timestamp) + ".png")).string(),
        *gt_instances);
  }

  json r;
  r["t"] = frame.timestamp;
  r["color"] = stem + "_color.png";
  r["depth"] = stem + "_depth.png";
  r["masks"] = stem + "_masks.png";
  r["embeddings"] = stem + "_embeddings.bin";
  std::vector<double> pose16(16);
  const Eigen::Matrix4d m = frame.pose.matrix();
  for (int i = 0; i < 16; ++i) pose16[i] = m(i / 4, i % 4);
  r["pose"] = pose16;
  impl_->records.push_back(std::move(r));
}

void DatasetWriter::finish() {
  if (impl_->finished) return;
  impl_->finished = true;
  std::ofstream f(impl_->dir / "manifest.jsonl");
  for (const auto& r : impl_->records) f << r.dump() << "\n";
}

std::string DatasetWriter::manifest_path() const {
  return (impl_->dir / "manifest.jsonl").string();
}

}  // namespace omni
