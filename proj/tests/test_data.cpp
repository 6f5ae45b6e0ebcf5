#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "basnet/data.hpp"
#include "basnet/image_io.hpp"
#include "basnet/image_ops.hpp"

namespace fs = std::filesystem;
using namespace basnet;
using namespace basnet::data;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("basnet_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "gt");
  return dir;
}

Image gradient_image(int h, int w) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(h) * w * 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      v.push_back(static_cast<double>(r) / h);
      v.push_back(static_cast<double>(c) / w);
      v.push_back(0.5);
    }
  return Image(h, w, v);
}

Mask disc(int h, int w) {
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double dr = r - h / 2.0, dc = c - w / 2.0;
      v[static_cast<std::size_t>(r) * w + c] = dr * dr + dc * dc < h * w / 9.0 ? 1.0 : 0.0;
    }
  return Mask(h, w, v);
}

void write_pair(const fs::path& dir, const std::string& stem, int h = 24, int w = 30) {
  io::write_image_png(dir / "img" / (stem + ".png"), gradient_image(h, w));
  io::write_mask_png(dir / "gt" / (stem + ".png"), disc(h, w));
}

}  // namespace

TEST(Scan, PairsByStemInSortedOrder) {
  const auto dir = scratch("sorted");
  for (const char* stem : {"b", "c", "a"}) write_pair(dir, stem);
  std::ofstream(dir / "img" / "notes.txt") << "ignored";
  const auto pairs = scan_pairs({dir / "img", dir / "gt"});
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0].identifier, "a");
  EXPECT_EQ(pairs[1].identifier, "b");
  EXPECT_EQ(pairs[2].identifier, "c");
  const auto sample = load_sample(pairs[0]);
  EXPECT_EQ(sample.original_size, (Size{24, 30}));
  EXPECT_EQ(sample.mask, disc(24, 30));
}

TEST(Scan, UnpairedFilesAreListed) {
  const auto dir = scratch("unpaired");
  write_pair(dir, "a");
  io::write_image_png(dir / "img" / "lonely.png", gradient_image(4, 4));
  io::write_mask_png(dir / "gt" / "orphan.png", Mask(4, 4, 0.0));
  try {
    scan_pairs({dir / "img", dir / "gt"});
    FAIL() << "expected PairingError";
  } catch (const PairingError& e) {
    EXPECT_EQ(e.images_without_mask(), std::vector<std::string>{"lonely"});
    EXPECT_EQ(e.masks_without_image(), std::vector<std::string>{"orphan"});
  }
}

TEST(Scan, EmptyCorpusYieldsNoPairs) {
  const auto dir = scratch("empty");
  EXPECT_TRUE(scan_pairs({dir / "img", dir / "gt"}).empty());
}

TEST(Scan, MissingDirectoryIsReported) {
  const auto dir = scratch("missing");
  EXPECT_THROW(scan_pairs({dir / "nope", dir / "gt"}), MissingPathError);
}

TEST(Augment, FlipDoublesTheCorpus) {
  std::vector<Sample> samples;
  samples.reserve(10553);
  const Image img(2, 2, std::vector<double>(12, 0.25));
  const auto mask = Mask::from_rows({{1, 0}, {0, 0}});
  for (int i = 0; i < 10553; ++i) samples.push_back({img, mask, "s" + std::to_string(i), {2, 2}});
  const auto augmented = augment_hflip(samples);
  ASSERT_EQ(augmented.size(), 21106u);
  EXPECT_EQ(augmented[0].identifier, "s0");
  EXPECT_EQ(augmented[10553].identifier, "s0#hflip");
  EXPECT_EQ(augmented[10553].mask, Mask::from_rows({{0, 1}, {0, 0}}));
}

TEST(Transform, TrainItemShapesAndOffsetRange) {
  const Sample sample{gradient_image(50, 70), disc(50, 70), "x", {50, 70}};
  std::set<int> rows;
  std::set<int> cols;
  std::uint64_t state = 99;
  for (int k = 0; k < 40; ++k) {
    const auto item = train_transform(sample, state);
    ASSERT_EQ(item.image.sizes(), (std::vector<int64_t>{3, 288, 288}));
    ASSERT_EQ(item.image.dtype(), torch::kFloat32);
    ASSERT_EQ(item.mask.size(), (Size{288, 288}));
    ASSERT_GE(item.offset.row, 0);
    ASSERT_LE(item.offset.row, 32);
    ASSERT_GE(item.offset.col, 0);
    ASSERT_LE(item.offset.col, 32);
    rows.insert(item.offset.row);
    cols.insert(item.offset.col);
  }
  for (int k = 0; k < 5000; ++k) {
    const auto off = draw_crop_offset(state, {});
    rows.insert(off.row);
    cols.insert(off.col);
  }
  EXPECT_EQ(*rows.begin(), 0);
  EXPECT_EQ(*rows.rbegin(), 32);
  EXPECT_EQ(rows.size(), 33u);
  EXPECT_EQ(cols.size(), 33u);
}

TEST(Transform, ImageAndMaskShareTheCrop) {
  const Sample sample{gradient_image(40, 40), disc(40, 40), "x", {40, 40}};
  const TransformParams params{40, 24, {}};
  std::uint64_t state = 5;
  const auto item = train_transform(sample, state, params);
  EXPECT_EQ(item.mask, crop(sample.mask, item.offset.row, item.offset.col, {24, 24}));
  // Channel 0 holds row/h before normalization.
  const double expected = (static_cast<double>(item.offset.row + 3) / 40 - 0.485) / 0.229;
  EXPECT_NEAR(item.image[0][3][5].item<double>(), expected, 1e-6);
}

TEST(Transform, EqualStatesGiveIdenticalItems) {
  const Sample sample{gradient_image(33, 47), disc(33, 47), "x", {33, 47}};
  std::uint64_t a = 1234, b = 1234;
  const auto first = train_transform(sample, a);
  const auto second = train_transform(sample, b);
  EXPECT_EQ(first.offset, second.offset);
  EXPECT_TRUE(torch::equal(first.image, second.image));
  EXPECT_EQ(first.mask, second.mask);
  EXPECT_EQ(a, b);
}

TEST(Transform, EvalRestoresOriginalSize) {
  const auto image = gradient_image(37, 53);
  const auto input = eval_transform(image);
  EXPECT_EQ(input.image.sizes(), (std::vector<int64_t>{3, 320, 320}));
  const auto restored = input.restore(Mask(320, 320, 0.4));
  EXPECT_EQ(restored.size(), (Size{37, 53}));
  for (double v : restored.values()) ASSERT_EQ(v, 0.4);
}

TEST(Transform, RejectsCropLargerThanResize) {
  EXPECT_THROW((TransformParams{100, 120, {}}.validate()), ConfigError);
}

TEST(Seeds, DerivedStreamsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
  EXPECT_NE(derive_seed(7, 1, 2), derive_seed(7, 2, 1));
  EXPECT_NE(derive_seed(7, 1, 2), derive_seed(8, 1, 2));
  // Reference SplitMix64 output for state 0.
  std::uint64_t state = 0;
  EXPECT_EQ(splitmix64(state), 0xe220a8397b1dcdafULL);
}
