#pragma once

// Frame-to-block dataset protocol: half-size reduction, zero padding to a
// multiple of the block size, 50x50 tiling, face-fraction labels and
// session-disjoint train/test splits.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amfm/dca.hpp"
#include "amfm/error.hpp"
#include "amfm/image.hpp"
#include "amfm/image_io.hpp"
#include "amfm/parallel.hpp"
#include "amfm/tensor_io.hpp"
#include "json.hpp"

namespace amfm {

inline constexpr std::size_t kBlockSize = 50;
inline constexpr double kBlockArea = static_cast<double>(kBlockSize * kBlockSize);

struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double x1() const noexcept { return x + w; }
  double y1() const noexcept { return y + h; }
  double area() const noexcept { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline void to_json(nlohmann::json& j, const Box& b) { j = {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

inline void from_json(const nlohmann::json& j, Box& b) {
  b.x = j.at("x").get<double>();
  b.y = j.at("y").get<double>();
  b.w = j.at("w").get<double>();
  b.h = j.at("h").get<double>();
}

/// Area of the union of axis-aligned rectangles, by coordinate compression.
inline double union_area(const std::vector<Box>& boxes) {
  std::vector<double> xs, ys;
  for (const auto& b : boxes) {
    if (b.w <= 0 || b.h <= 0) continue;
    xs.insert(xs.end(), {b.x, b.x1()});
    ys.insert(ys.end(), {b.y, b.y1()});
  }
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      const double cx = 0.5 * (xs[i] + xs[i + 1]), cy = 0.5 * (ys[j] + ys[j + 1]);
      for (const auto& b : boxes) {
        if (b.w > 0 && b.h > 0 && cx > b.x && cx < b.x1() && cy > b.y && cy < b.y1()) {
          area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
          break;
        }
      }
    }
  }
  return area;
}

inline std::optional<Box> intersect(const Box& a, const Box& b) {
  const double x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.x1(), b.x1()), y1 = std::min(a.y1(), b.y1());
  if (x1 <= x0 || y1 <= y0) return std::nullopt;
  return Box{x0, y0, x1 - x0, y1 - y0};
}

struct FrameRecord {
  std::string session_id;
  std::string frame_id;
  RealImage image;
  std::vector<Box> face_boxes;  // original-frame pixel coordinates

  void validate() const {
    if (session_id.empty()) throw ValidationError("frame record has an empty session_id");
    if (image.empty()) throw ValidationError("frame " + frame_id + " has an empty image");
    constexpr double eps = 1e-6;
    for (const auto& b : face_boxes) {
      if (b.w < 0 || b.h < 0 || b.x < -eps || b.y < -eps || b.x1() > static_cast<double>(image.cols()) + eps ||
          b.y1() > static_cast<double>(image.rows()) + eps)
        throw ValidationError("face box outside image bounds in frame " + session_id + "/" + frame_id);
    }
  }
};

struct PreprocessedFrame {
  RealImage image;           // padded, dims multiples of kBlockSize
  std::vector<Box> boxes;    // reduced-frame coordinates, clipped to content
  std::size_t content_rows = 0;
  std::size_t content_cols = 0;

  std::size_t grid_rows() const noexcept { return image.rows() / kBlockSize; }
  std::size_t grid_cols() const noexcept { return image.cols() / kBlockSize; }
};

inline std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

/// 2x2 box-average reduction (odd trailing row/col dropped), then zero padding
/// at bottom/right up to the next multiple of the block size.
inline PreprocessedFrame preprocess_frame(const FrameRecord& rec) {
  require(!rec.image.empty(), "preprocess_frame: empty image");
  const std::size_t hr = rec.image.rows() / 2, hc = rec.image.cols() / 2;
  require(hr >= 1 && hc >= 1, "preprocess_frame: frame must be at least 2x2");
  PreprocessedFrame out;
  out.content_rows = hr;
  out.content_cols = hc;
  out.image = RealImage(std::max(round_up(hr, kBlockSize), kBlockSize), std::max(round_up(hc, kBlockSize), kBlockSize), 0.0f);
  for (std::size_t r = 0; r < hr; ++r) {
    for (std::size_t c = 0; c < hc; ++c) {
      const float s = rec.image(2 * r, 2 * c) + rec.image(2 * r, 2 * c + 1) + rec.image(2 * r + 1, 2 * c) +
                      rec.image(2 * r + 1, 2 * c + 1);
      out.image(r, c) = 0.25f * s;
    }
  }
  const Box content{0, 0, static_cast<double>(hc), static_cast<double>(hr)};
  for (const auto& b : rec.face_boxes) {
    if (auto clipped = intersect(Box{0.5 * b.x, 0.5 * b.y, 0.5 * b.w, 0.5 * b.h}, content)) out.boxes.push_back(*clipped);
  }
  return out;
}

/// Face fraction of every block, row-major over the grid.
inline std::vector<float> block_labels(const std::vector<Box>& boxes, std::size_t grid_rows, std::size_t grid_cols) {
  std::vector<float> labels(grid_rows * grid_cols, 0.0f);
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      const Box block{static_cast<double>(gc * kBlockSize), static_cast<double>(gr * kBlockSize),
                      static_cast<double>(kBlockSize), static_cast<double>(kBlockSize)};
      std::vector<Box> parts;
      for (const auto& b : boxes)
        if (auto p = intersect(block, b)) parts.push_back(*p);
      labels[gr * grid_cols + gc] = static_cast<float>(std::clamp(union_area(parts) / kBlockArea, 0.0, 1.0));
    }
  }
  return labels;
}

enum class BlockMode { gray, ia, fm, ia_fm };

inline std::size_t mode_channels(BlockMode m) { return m == BlockMode::ia_fm ? 2 : 1; }

inline bool mode_needs_dca(BlockMode m) { return m != BlockMode::gray; }

inline std::string to_string(BlockMode m) {
  switch (m) {
    case BlockMode::gray: return "gray";
    case BlockMode::ia: return "ia";
    case BlockMode::fm: return "fm";
    case BlockMode::ia_fm: return "ia_fm";
  }
  return "gray";
}

inline BlockMode parse_mode(const std::string& s) {
  if (s == "gray") return BlockMode::gray;
  if (s == "ia") return BlockMode::ia;
  if (s == "fm") return BlockMode::fm;
  if (s == "ia_fm") return BlockMode::ia_fm;
  throw ParameterError("unknown mode '" + s + "' (expected gray|ia|fm|ia_fm)");
}

struct BlockSample {
  Tensor<float> channels;  // kBlockSize x kBlockSize x C
  float label = 0.0f;      // face fraction in [0, 1]
  std::string session_id;
  std::string frame_id;
  std::size_t grid_row = 0;
  std::size_t grid_col = 0;

  std::size_t channel_count() const { return channels.dims().at(2); }
};

/// Shared DCA results per frame, keyed by frame identity and front-end config.
class DcaCache {
 public:
  std::shared_ptr<const AmFmDecomposition> get_or_compute(const std::string& key, const DcaProcessor& proc,
                                                          const RealImage& image) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    auto d = std::make_shared<const AmFmDecomposition>(proc.decompose(image));
    std::lock_guard lock(mutex_);
    return entries_.emplace(key, std::move(d)).first->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const AmFmDecomposition>> entries_;
};

inline std::string dca_cache_key(const std::string& session_id, const std::string& frame_id, const DcaProcessor& proc) {
  const auto& o = proc.options();
  return session_id + "/" + frame_id + "@" + proc.filterbank().config_hash() + ":" +
         std::to_string(static_cast<int>(o.boundary)) + std::to_string(static_cast<int>(o.axis)) +
         std::to_string(o.include_baseband) + std::to_string(o.include_bandpass);
}

/// Network-input planes for a padded frame in the given mode.
inline std::vector<RealImage> mode_planes(const RealImage& padded, BlockMode mode, const AmFmDecomposition* dca) {
  if (mode == BlockMode::gray) return {padded};
  require(dca != nullptr, "mode requires a DCA decomposition");
  switch (mode) {
    case BlockMode::ia: return {ia_image_normalized(*dca)};
    case BlockMode::fm: return {fm_image_unit(*dca)};
    default: return {ia_image_normalized(*dca), fm_image_unit(*dca)};
  }
}

/// Cuts planes into row-major 50x50 blocks labelled from `boxes`.
inline std::vector<BlockSample> cut_blocks(const std::vector<RealImage>& planes, const std::vector<Box>& boxes,
                                           const std::string& session_id, const std::string& frame_id) {
  require(!planes.empty(), "cut_blocks: no planes");
  const auto rows = planes.front().rows(), cols = planes.front().cols();
  if (rows % kBlockSize != 0 || cols % kBlockSize != 0 || rows == 0 || cols == 0)
    throw ParameterError("tile_blocks: image dims must be non-zero multiples of 50");
  const std::size_t gr = rows / kBlockSize, gc = cols / kBlockSize, nc = planes.size();
  const auto labels = block_labels(boxes, gr, gc);
  std::vector<BlockSample> out;
  out.reserve(gr * gc);
  for (std::size_t br = 0; br < gr; ++br) {
    for (std::size_t bc = 0; bc < gc; ++bc) {
      BlockSample s;
      s.channels = Tensor<float>({kBlockSize, kBlockSize, nc});
      for (std::size_t r = 0; r < kBlockSize; ++r)
        for (std::size_t c = 0; c < kBlockSize; ++c)
          for (std::size_t ch = 0; ch < nc; ++ch)
            s.channels[(r * kBlockSize + c) * nc + ch] = planes[ch](br * kBlockSize + r, bc * kBlockSize + c);
      s.label = labels[br * gc + bc];
      s.session_id = session_id;
      s.frame_id = frame_id;
      s.grid_row = br;
      s.grid_col = bc;
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// DCA runs once on the full padded frame, then the frame is tiled.
inline std::vector<BlockSample> tile_blocks(const PreprocessedFrame& frame, BlockMode mode, const DcaProcessor* proc,
                                            const std::string& session_id = {}, const std::string& frame_id = {},
                                            DcaCache* cache = nullptr) {
  if (frame.image.rows() % kBlockSize != 0 || frame.image.cols() % kBlockSize != 0)
    throw ParameterError("tile_blocks: image dims must be multiples of 50");
  std::shared_ptr<const AmFmDecomposition> dca;
  if (mode_needs_dca(mode)) {
    require(proc != nullptr, "tile_blocks: mode requires a DCA processor");
    dca = cache ? cache->get_or_compute(dca_cache_key(session_id, frame_id, *proc), *proc, frame.image)
                : std::make_shared<const AmFmDecomposition>(proc->decompose(frame.image));
  }
  return cut_blocks(mode_planes(frame.image, mode, dca.get()), frame.boxes, session_id, frame_id);
}

/// Inverse of tiling for one channel.
inline RealImage reassemble(const std::vector<BlockSample>& blocks, std::size_t grid_rows, std::size_t grid_cols,
                            std::size_t channel = 0) {
  require(blocks.size() == grid_rows * grid_cols, "reassemble: block count does not match grid");
  RealImage out(grid_rows * kBlockSize, grid_cols * kBlockSize);
  for (const auto& b : blocks) {
    const auto nc = b.channel_count();
    for (std::size_t r = 0; r < kBlockSize; ++r)
      for (std::size_t c = 0; c < kBlockSize; ++c)
        out(b.grid_row * kBlockSize + r, b.grid_col * kBlockSize + c) = b.channels[(r * kBlockSize + c) * nc + channel];
  }
  return out;
}

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path labels;
  std::string session_id;
  std::string frame_id;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // relative paths resolve against this

  /// Hard failure when any session appears in both splits.
  void validate() const {
    std::set<std::string> train, test;
    for (const auto& e : entries) {
      if (e.session_id.empty()) throw ValidationError("manifest entry with empty session_id");
      (e.split == Split::train ? train : test).insert(e.session_id);
    }
    for (const auto& s : train)
      if (test.count(s)) throw ValidationError("session '" + s + "' appears in both train and test splits");
  }

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : base_dir / p; }
};

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open manifest: " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    nlohmann::json j;
    is >> j;
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("image").get<std::string>(), e.at("labels").get<std::string>(),
                           e.at("session_id").get<std::string>(), e.at("frame_id").get<std::string>(),
                           parse_split(e.at("split").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"image", e.image.generic_string()},
                            {"labels", e.labels.generic_string()},
                            {"session_id", e.session_id},
                            {"frame_id", e.frame_id},
                            {"split", to_string(e.split)}});
  std::ofstream(path) << j.dump(2) << '\n';
}

inline std::vector<Box> load_boxes(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open label file: " + path.string());
  try {
    nlohmann::json j;
    is >> j;
    return j.get<std::vector<Box>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("label file " + path.string() + ": " + e.what());
  }
}

inline void save_boxes(const std::filesystem::path& path, const std::vector<Box>& boxes) {
  std::ofstream(path) << nlohmann::json(boxes).dump() << '\n';
}

/// Samples of one frame plus its grid geometry.
struct FrameBlocks {
  std::string session_id;
  std::string frame_id;
  Split split = Split::train;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::vector<BlockSample> blocks;
};

struct Dataset {
  BlockMode mode = BlockMode::gray;
  std::vector<FrameBlocks> frames;  // manifest order

  std::vector<BlockSample> samples(Split split) const {
    std::vector<BlockSample> out;
    for (const auto& f : frames)
      if (f.split == split) out.insert(out.end(), f.blocks.begin(), f.blocks.end());
    return out;
  }

  std::size_t count(Split split) const {
    std::size_t n = 0;
    for (const auto& f : frames)
      if (f.split == split) n += f.blocks.size();
    return n;
  }
};

struct LabeledFrame {
  FrameRecord record;
  Split split = Split::train;
};

/// Tiles every frame (in parallel), merging in input order.
inline Dataset build_dataset(const std::vector<LabeledFrame>& frames, BlockMode mode, const DcaProcessor* proc,
                             unsigned threads = 1, DcaCache* cache = nullptr) {
  std::set<std::string> train, test;
  for (const auto& f : frames) (f.split == Split::train ? train : test).insert(f.record.session_id);
  for (const auto& s : train)
    if (test.count(s)) throw ValidationError("session '" + s + "' appears in both train and test splits");
  Dataset ds;
  ds.mode = mode;
  ds.frames.resize(frames.size());
  parallel_for(frames.size(), threads, [&](std::size_t i) {
    const auto& rec = frames[i].record;
    rec.validate();
    const auto pre = preprocess_frame(rec);
    auto& out = ds.frames[i];
    out.session_id = rec.session_id;
    out.frame_id = rec.frame_id;
    out.split = frames[i].split;
    out.grid_rows = pre.grid_rows();
    out.grid_cols = pre.grid_cols();
    out.blocks = tile_blocks(pre, mode, proc, rec.session_id, rec.frame_id, cache);
  });
  return ds;
}

inline std::vector<LabeledFrame> load_frames(const DatasetManifest& manifest, unsigned threads = 1) {
  manifest.validate();
  std::vector<LabeledFrame> frames(manifest.entries.size());
  parallel_for(frames.size(), threads, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    frames[i].record = {e.session_id, e.frame_id, read_gray(manifest.resolve(e.image)), load_boxes(manifest.resolve(e.labels))};
    frames[i].split = e.split;
  });
  return frames;
}

inline Dataset build_dataset(const DatasetManifest& manifest, BlockMode mode, const DcaProcessor* proc,
                             unsigned threads = 1, DcaCache* cache = nullptr) {
  return build_dataset(load_frames(manifest, threads), mode, proc, threads, cache);
}

/// On-disk cache: one tensor (blocks x 50 x 50 x C) per frame plus index.json.
inline void write_dataset_cache(const std::filesystem::path& dir, const Dataset& ds, const std::string& fb_hash = {}) {
  std::filesystem::create_directories(dir / "blocks");
  nlohmann::json idx;
  idx["mode"] = to_string(ds.mode);
  idx["channels"] = mode_channels(ds.mode);
  idx["block_size"] = kBlockSize;
  idx["filterbank_hash"] = fb_hash;
  idx["counts"] = {{"train", ds.count(Split::train)}, {"test", ds.count(Split::test)}};
  idx["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const auto& f = ds.frames[i];
    const std::size_t nc = mode_channels(ds.mode);
    Tensor<float> t({f.blocks.size(), kBlockSize, kBlockSize, nc});
    std::vector<float> labels;
    for (std::size_t b = 0; b < f.blocks.size(); ++b) {
      std::copy(f.blocks[b].channels.data().begin(), f.blocks[b].channels.data().end(),
                t.data().begin() + static_cast<std::ptrdiff_t>(b * kBlockSize * kBlockSize * nc));
      labels.push_back(f.blocks[b].label);
    }
    const std::string file = "blocks/" + f.session_id + "_" + f.frame_id + "_" + to_string(ds.mode) + ".aft";
    write_tensor(dir / file, t);
    idx["frames"].push_back({{"session_id", f.session_id},
                             {"frame_id", f.frame_id},
                             {"split", to_string(f.split)},
                             {"file", file},
                             {"grid_rows", f.grid_rows},
                             {"grid_cols", f.grid_cols},
                             {"labels", labels}});
  }
  std::ofstream(dir / "index.json") << idx.dump(1) << '\n';
}

inline Dataset read_dataset_cache(const std::filesystem::path& index_path) {
  std::ifstream is(index_path);
  if (!is) throw ValidationError("cannot open dataset index: " + index_path.string());
  Dataset ds;
  try {
    nlohmann::json idx;
    is >> idx;
    ds.mode = parse_mode(idx.at("mode").get<std::string>());
    const std::size_t nc = mode_channels(ds.mode);
    const auto dir = index_path.parent_path();
    for (const auto& f : idx.at("frames")) {
      FrameBlocks fb;
      fb.session_id = f.at("session_id").get<std::string>();
      fb.frame_id = f.at("frame_id").get<std::string>();
      fb.split = parse_split(f.at("split").get<std::string>());
      fb.grid_rows = f.at("grid_rows").get<std::size_t>();
      fb.grid_cols = f.at("grid_cols").get<std::size_t>();
      const auto labels = f.at("labels").get<std::vector<float>>();
      const auto t = read_tensor(dir / f.at("file").get<std::string>());
      const std::size_t n = fb.grid_rows * fb.grid_cols;
      if (t.rank() != 4 || t.dims()[0] != n || t.dims()[1] != kBlockSize || t.dims()[2] != kBlockSize ||
          t.dims()[3] != nc || labels.size() != n)
        throw ValidationError("dataset cache entry has inconsistent shape: " + fb.frame_id);
      const std::size_t per = kBlockSize * kBlockSize * nc;
      for (std::size_t b = 0; b < n; ++b) {
        BlockSample s;
        s.channels = Tensor<float>({kBlockSize, kBlockSize, nc},
                                   std::vector<float>(t.data().begin() + static_cast<std::ptrdiff_t>(b * per),
                                                      t.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * per)));
        s.label = labels[b];
        s.session_id = fb.session_id;
        s.frame_id = fb.frame_id;
        s.grid_row = b / fb.grid_cols;
        s.grid_col = b % fb.grid_cols;
        fb.blocks.push_back(std::move(s));
      }
      ds.frames.push_back(std::move(fb));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("dataset index: ") + e.what());
  }
  std::set<std::string> train, test;
  for (const auto& f : ds.frames) (f.split == Split::train ? train : test).insert(f.session_id);
  for (const auto& s : train)
    if (test.count(s)) throw ValidationError("session '" + s + "' appears in both train and test splits");
  return ds;
}

}  // namespace amfm
