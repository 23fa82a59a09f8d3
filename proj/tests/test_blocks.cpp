#include <gtest/gtest.h>

#include <filesystem>

#include "amfm/blocks.hpp"
#include "amfm/image_io.hpp"
#include "amfm/rng.hpp"

using namespace amfm;
namespace fs = std::filesystem;

namespace {

RealImage random_image(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto rng = make_rng(seed, "test.blocks");
  RealImage img(rows, cols);
  for (auto& v : img.data()) v = float(uniform(rng));
  return img;
}

LabeledFrame frame(const std::string& session, const std::string& id, std::size_t rows, std::size_t cols, Split split,
                   std::vector<Box> boxes = {}) {
  return {{session, id, RealImage(rows, cols, 0.5f), std::move(boxes)}, split};
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("amfm_test_blocks_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Preprocess, Frame480x864GivesFortyFiveBlocks) {
  const auto pre = preprocess_frame({"s", "f", RealImage(480, 864, 0.2f), {}});
  EXPECT_EQ(pre.content_rows, 240u);
  EXPECT_EQ(pre.content_cols, 432u);
  EXPECT_EQ(pre.image.rows(), 250u);
  EXPECT_EQ(pre.image.cols(), 450u);
  EXPECT_EQ(pre.grid_rows() * pre.grid_cols(), 45u);
  EXPECT_EQ(tile_blocks(pre, BlockMode::gray, nullptr).size(), 45u);
}

TEST(Preprocess, ExactMultipleNeedsNoPadding) {
  const auto pre = preprocess_frame({"s", "f", RealImage(100, 100, 0.2f), {}});
  EXPECT_EQ(pre.image.rows(), 50u);
  EXPECT_EQ(pre.image.cols(), 50u);
  for (float v : pre.image.data()) EXPECT_FLOAT_EQ(v, 0.2f);
}

TEST(Preprocess, OddFrameTracedByHand) {
  const auto img = random_image(101, 99, 1);
  const auto pre = preprocess_frame({"s", "f", img, {{10, 20, 30, 40}}});
  ASSERT_EQ(pre.image.rows(), 50u);
  ASSERT_EQ(pre.image.cols(), 50u);
  EXPECT_EQ(pre.content_cols, 49u);
  for (std::size_t r = 0; r < 50; ++r) {
    for (std::size_t c = 0; c < 49; ++c) {
      const float m = 0.25f * (img(2 * r, 2 * c) + img(2 * r, 2 * c + 1) + img(2 * r + 1, 2 * c) + img(2 * r + 1, 2 * c + 1));
      EXPECT_FLOAT_EQ(pre.image(r, c), m);
    }
    EXPECT_EQ(pre.image(r, 49), 0.0f);
  }
  ASSERT_EQ(pre.boxes.size(), 1u);
  EXPECT_EQ(pre.boxes[0], (Box{5, 10, 15, 20}));
}

TEST(Preprocess, BoxesClippedToContent) {
  const auto pre = preprocess_frame({"s", "f", RealImage(101, 99, 0.f), {{90, 90, 9, 11}}});
  ASSERT_EQ(pre.boxes.size(), 1u);
  EXPECT_EQ(pre.boxes[0], (Box{45, 45, 4, 5}));
}

TEST(Labels, BoxArithmetic) {
  for (float v : block_labels({}, 2, 3)) EXPECT_EQ(v, 0.0f);
  const auto exact = block_labels({{50, 0, 50, 50}}, 2, 3);
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_EQ(exact[i], i == 1 ? 1.0f : 0.0f);
  const auto straddle = block_labels({{25, 0, 50, 25}}, 1, 2);
  EXPECT_FLOAT_EQ(straddle[0], 0.25f);
  EXPECT_FLOAT_EQ(straddle[1], 0.25f);
  // Overlapping boxes count their union once.
  const auto overlap = block_labels({{0, 0, 50, 50}, {0, 0, 25, 25}}, 1, 1);
  EXPECT_EQ(overlap[0], 1.0f);
}

TEST(Labels, AreaConservation) {
  auto rng = make_rng(3, "test.blocks.area");
  std::vector<Box> boxes;
  for (int i = 0; i < 5; ++i)
    boxes.push_back({uniform(rng, 0, 300), uniform(rng, 0, 150), uniform(rng, 5, 80), uniform(rng, 5, 80)});
  const auto labels = block_labels(boxes, 5, 9);
  double total = 0;
  for (float v : labels) total += double(v) * kBlockArea;
  EXPECT_NEAR(total, union_area(boxes), 0.5 * double(boxes.size()));
}

TEST(Tiling, ReassemblyIsExact) {
  const auto pre = preprocess_frame({"s", "f", random_image(300, 410, 2), {}});
  const auto blocks = tile_blocks(pre, BlockMode::gray, nullptr, "s", "f");
  ASSERT_EQ(blocks.size(), pre.grid_rows() * pre.grid_cols());
  EXPECT_EQ(reassemble(blocks, pre.grid_rows(), pre.grid_cols()), pre.image);
  EXPECT_EQ(blocks[4].grid_row, 0u);
  EXPECT_EQ(blocks[4].grid_col, 4u);
  EXPECT_EQ(blocks[5].grid_row, 1u);
}

TEST(Tiling, RejectsNonMultipleDims) {
  PreprocessedFrame bad;
  bad.image = RealImage(60, 50);
  EXPECT_THROW(tile_blocks(bad, BlockMode::gray, nullptr), ParameterError);
}

TEST(Tiling, DcaModesRunOnWholeFrame) {
  const auto fb = build_filterbank();
  const DcaProcessor proc(fb);
  const auto pre = preprocess_frame({"s", "f", random_image(200, 200, 4), {}});
  const auto d = proc.decompose(pre.image);
  const auto fm = fm_image_unit(d), ia = ia_image_normalized(d);
  const auto blocks = tile_blocks(pre, BlockMode::ia_fm, &proc, "s", "f");
  ASSERT_EQ(blocks.size(), 4u);
  EXPECT_EQ(blocks[0].channel_count(), 2u);
  EXPECT_EQ(reassemble(blocks, 2, 2, 0), ia);
  EXPECT_EQ(reassemble(blocks, 2, 2, 1), fm);
  for (const auto& b : blocks)
    for (float v : b.channels.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  EXPECT_THROW(tile_blocks(pre, BlockMode::fm, nullptr), ParameterError);
}

TEST(Tiling, CacheSharesDecompositions) {
  const auto fb = build_filterbank();
  const DcaProcessor proc(fb);
  DcaCache cache;
  const auto pre = preprocess_frame({"s", "f", random_image(100, 100, 5), {}});
  const auto a = tile_blocks(pre, BlockMode::fm, &proc, "s", "f", &cache);
  const auto b = tile_blocks(pre, BlockMode::ia, &proc, "s", "f", &cache);
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_EQ(a[0].channels.data(), tile_blocks(pre, BlockMode::fm, &proc).at(0).channels.data());
  (void)b;
}

TEST(Dataset, FullScaleSessionCounts) {
  std::vector<LabeledFrame> frames;
  for (int s = 0; s < 18; ++s)
    for (int f = 0; f < 24; ++f)
      frames.push_back(frame("s" + std::to_string(s), "f" + std::to_string(f), 480, 864, s < 12 ? Split::train : Split::test));
  const auto ds = build_dataset(frames, BlockMode::gray, nullptr);
  EXPECT_EQ(ds.count(Split::train), 12960u);
  EXPECT_EQ(ds.count(Split::test), 6480u);
  EXPECT_EQ(ds.samples(Split::train).size(), 12960u);
}

TEST(Dataset, OrderAndDeterminism) {
  std::vector<LabeledFrame> frames = {frame("a", "1", 200, 300, Split::train, {{0, 0, 100, 100}}),
                                      frame("b", "1", 200, 300, Split::test), frame("a", "2", 200, 300, Split::train)};
  const auto one = build_dataset(frames, BlockMode::gray, nullptr, 1);
  const auto many = build_dataset(frames, BlockMode::gray, nullptr, 3);
  const auto train = one.samples(Split::train);
  ASSERT_EQ(train.size(), 12u);
  EXPECT_EQ(train[0].frame_id, "1");
  EXPECT_EQ(train[6].frame_id, "2");
  EXPECT_EQ(train[0].label, 1.0f);
  EXPECT_EQ(train[1].label, 0.0f);
  const auto train3 = many.samples(Split::train);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(train[i].channels.data(), train3[i].channels.data());
}

TEST(Dataset, SessionOverlapRejected) {
  std::vector<LabeledFrame> frames = {frame("a", "1", 100, 100, Split::train), frame("a", "2", 100, 100, Split::test)};
  EXPECT_THROW(build_dataset(frames, BlockMode::gray, nullptr), ValidationError);

  DatasetManifest m;
  m.entries = {{"x.pgm", "x.json", "a", "1", Split::train}, {"y.pgm", "y.json", "a", "2", Split::test}};
  EXPECT_THROW(m.validate(), ValidationError);
  const auto dir = scratch("overlap");
  save_manifest(dir / "manifest.json", m);
  EXPECT_THROW(load_manifest(dir / "manifest.json"), ValidationError);
}

TEST(Dataset, ManifestRoundTripAndCache) {
  const auto dir = scratch("manifest");
  fs::create_directories(dir / "frames");
  DatasetManifest m;
  for (int i = 0; i < 3; ++i) {
    const std::string id = "f" + std::to_string(i);
    write_pgm(dir / "frames" / (id + ".pgm"), random_image(120, 140, 10 + i));
    save_boxes(dir / "frames" / (id + ".json"), {{10.0 * i, 8, 40, 30}});
    m.entries.push_back({"frames/" + id + ".pgm", "frames/" + id + ".json", i < 2 ? "s0" : "s1", id,
                         i < 2 ? Split::train : Split::test});
  }
  save_manifest(dir / "manifest.json", m);
  const auto loaded = load_manifest(dir / "manifest.json");
  ASSERT_EQ(loaded.entries.size(), 3u);
  EXPECT_EQ(loaded.entries[2].split, Split::test);

  const auto fb = build_filterbank();
  const DcaProcessor proc(fb);
  const auto ds = build_dataset(loaded, BlockMode::fm, &proc);
  EXPECT_EQ(ds.count(Split::train), 2u * 4u);  // 60x70 pads to 2x2 blocks
  write_dataset_cache(dir / "cache", ds, fb.config_hash());
  const auto back = read_dataset_cache(dir / "cache" / "index.json");
  EXPECT_EQ(back.mode, BlockMode::fm);
  ASSERT_EQ(back.frames.size(), ds.frames.size());
  for (std::size_t f = 0; f < ds.frames.size(); ++f)
    for (std::size_t b = 0; b < ds.frames[f].blocks.size(); ++b) {
      EXPECT_EQ(back.frames[f].blocks[b].channels.data(), ds.frames[f].blocks[b].channels.data());
      EXPECT_EQ(back.frames[f].blocks[b].label, ds.frames[f].blocks[b].label);
    }
  EXPECT_THROW(load_boxes(dir / "missing.json"), ValidationError);
  EXPECT_THROW(read_dataset_cache(dir / "nope" / "index.json"), ValidationError);
}

TEST(FrameRecord, ValidationRules) {
  EXPECT_THROW((FrameRecord{"", "f", RealImage(10, 10), {}}.validate()), ValidationError);
  EXPECT_THROW((FrameRecord{"s", "f", RealImage(10, 10), {{5, 5, 10, 2}}}.validate()), ValidationError);
  EXPECT_NO_THROW((FrameRecord{"s", "f", RealImage(10, 10), {{0, 0, 10, 10}}}.validate()));
}
