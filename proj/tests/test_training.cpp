#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "basnet/training.hpp"

namespace fs = std::filesystem;
using namespace basnet;
using namespace basnet::training;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("basnet_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<Sample> synthetic_corpus(int count, int size) {
  std::vector<Sample> out;
  for (int k = 0; k < count; ++k) {
    std::vector<double> rgb;
    std::vector<double> mask;
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const bool fg = std::abs(r - size / 2) + std::abs(c - size / 2 - k) < size / 4;
        mask.push_back(fg ? 1.0 : 0.0);
        rgb.push_back(fg ? 0.9 : 0.1);
        rgb.push_back(static_cast<double>(r) / size);
        rgb.push_back(fg ? 0.2 : 0.7);
      }
    out.push_back({Image(size, size, rgb), Mask(size, size, mask), "pair" + std::to_string(k), {size, size}});
  }
  return out;
}

TrainConfig small_config(const fs::path& out, nn::Architecture arch = nn::Architecture::kUNetBaseline) {
  TrainConfig c;
  c.architecture = arch;
  c.batch_size = 2;
  c.max_iterations = 10;
  c.seed = 3;
  c.transform.resize = 40;
  c.transform.crop = 32;
  c.output_dir = out;
  c.loader_threads = 2;
  return c;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

TEST(Ablation, TwelveRowsResolve) {
  const auto& rows = ablation_rows();
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows.front(), "U-Net + l_b");
  EXPECT_EQ(rows.back(), "EDS+RRM_Ours + l_bsi");
  for (const auto& row : rows) EXPECT_NO_THROW(build_ablation_config(row)) << row;

  const auto c = build_ablation_config("EDS + RRM_Ours + ℓ_bs");
  EXPECT_EQ(c.architecture, nn::Architecture::kEDS_RRM_Ours);
  EXPECT_EQ(c.loss, losses::LossVariant::kBS);
  EXPECT_EQ(build_ablation_config("ED + l_b").architecture, nn::Architecture::kED);
  EXPECT_THROW(build_ablation_config("EDS + l_x"), ConfigError);
}

TEST(Ablation, LossWeightsFollowOutputCount) {
  auto c = build_ablation_config("EDS + l_b");
  EXPECT_EQ(c.loss_config().alpha.size(), 7u);
  c = build_ablation_config("EDS+RRM_Ours + l_bsi");
  EXPECT_EQ(c.loss_config().alpha.size(), 8u);
  c = build_ablation_config("U-Net + l_b");
  const auto lc = c.loss_config();
  EXPECT_EQ(lc.alpha.size(), 1u);
  EXPECT_TRUE(lc.bce);
  EXPECT_FALSE(lc.ssim);
  EXPECT_FALSE(lc.iou);
}

TEST(RunConfig, KeysOverrideRowAndPathsResolve) {
  const auto c = parse_run_config_text(
      "# ablation cell\n"
      "row = EDS+RRM_Ours + l_bi\n"
      "lr = 0.001  # faster\n"
      "batch_size = 4\n"
      "max_iterations = 50\n"
      "crop = 256\n"
      "norm_mean = 0.5, 0.5, 0.5\n"
      "image_dir = data/img\n"
      "mask_dir = /abs/gt\n"
      "hflip = false\n",
      "/base");
  EXPECT_EQ(c.architecture, nn::Architecture::kEDS_RRM_Ours);
  EXPECT_EQ(c.loss, losses::LossVariant::kBI);
  EXPECT_DOUBLE_EQ(c.adam.lr, 0.001);
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.transform.crop, 256);
  EXPECT_DOUBLE_EQ(c.transform.normalization.mean[2], 0.5);
  EXPECT_EQ(c.dataset.image_dir, fs::path("/base/data/img"));
  EXPECT_EQ(c.dataset.mask_dir, fs::path("/abs/gt"));
  EXPECT_FALSE(c.hflip);
}

TEST(RunConfig, Defaults) {
  const auto c = parse_run_config_text("");
  EXPECT_EQ(c.architecture, nn::Architecture::kEDS_RRM_Ours);
  EXPECT_EQ(c.loss, losses::LossVariant::kBSI);
  EXPECT_DOUBLE_EQ(c.adam.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.adam.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.adam.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.adam.eps, 1e-8);
  EXPECT_DOUBLE_EQ(c.adam.weight_decay, 0.0);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.transform.resize, 320);
  EXPECT_EQ(c.transform.crop, 288);
}

TEST(RunConfig, Errors) {
  EXPECT_THROW(parse_run_config_text("colour = red\n"), ConfigError);
  EXPECT_THROW(parse_run_config_text("batch_size = many\n"), ConfigError);
  EXPECT_THROW(parse_run_config_text("batch_size = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config_text("just words\n"), ConfigError);
  EXPECT_THROW(parse_run_config("/nonexistent/run.cfg"), data::MissingPathError);
}

TEST(StepLog, LineRoundTrips) {
  const StepRecord r{12, 1e-4, 0.5123456789, 0.25, 0.125, 0.8873456789};
  const auto back = StepRecord::parse(r.line());
  EXPECT_EQ(back.step, 12);
  EXPECT_NEAR(back.bce, r.bce, 1e-9);
  EXPECT_NEAR(back.total, r.total, 1e-9);
  EXPECT_EQ(r.line().rfind("step=12 lr=", 0), 0u);
  EXPECT_THROW(StepRecord::parse("step=1 lr=0.1"), CorruptDataError);
}

TEST(Schedule, EpochShufflesCoverTheCorpus) {
  const std::size_t n = 10;
  std::vector<int> seen(n, 0);
  for (std::int64_t step = 0; step < 5; ++step)
    for (auto i : batch_indices(4, step, 2, n)) ++seen[i];
  for (int count : seen) EXPECT_EQ(count, 1);
  EXPECT_EQ(batch_indices(4, 7, 3, n), batch_indices(4, 7, 3, n));
  EXPECT_NE(batch_indices(4, 0, 10, n), batch_indices(5, 0, 10, n));
  EXPECT_EQ(crop_stream(1, 2, 3), crop_stream(1, 2, 3));
  EXPECT_NE(crop_stream(1, 2, 3), crop_stream(1, 2, 4));
}

TEST(Train, SmokeRunLogsEveryStep) {
  const auto out = scratch("smoke");
  const auto result = train(small_config(out), synthetic_corpus(4, 48));
  EXPECT_EQ(result.final_step, 10);
  ASSERT_EQ(result.records.size(), 10u);
  ASSERT_EQ(result.checkpoints.size(), 1u);
  EXPECT_TRUE(fs::exists(result.final_checkpoint));
  EXPECT_TRUE(fs::exists(nn::manifest_path(result.final_checkpoint)));
  const auto lines = read_lines(out / "metrics.log");
  ASSERT_EQ(lines.size(), 10u);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto r = StepRecord::parse(lines[k]);
    EXPECT_EQ(r.step, static_cast<std::int64_t>(k + 1));
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_NEAR(r.total, r.bce + r.ssim + r.iou, 1e-6 * std::max(1.0, r.total));
  }
}

TEST(Train, CheckpointCadence) {
  const auto out = scratch("cadence");
  auto config = small_config(out);
  config.max_iterations = 5;
  config.checkpoint_every = 2;
  const auto result = train(config, synthetic_corpus(2, 48));
  ASSERT_EQ(result.checkpoints.size(), 3u);
  EXPECT_EQ(result.checkpoints[0].filename(), "step_00000002.pt");
  EXPECT_EQ(result.checkpoints[2].filename(), "step_00000005.pt");
}

TEST(Train, SameSeedSameFirstLoss) {
  const auto corpus = synthetic_corpus(4, 48);
  auto a = small_config(scratch("seed_a"));
  auto b = small_config(scratch("seed_b"));
  a.max_iterations = b.max_iterations = 1;
  const auto ra = train(a, corpus);
  const auto rb = train(b, corpus);
  EXPECT_EQ(ra.records[0].total, rb.records[0].total);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto corpus = synthetic_corpus(4, 48);
  auto straight = small_config(scratch("straight"));
  const auto full = train(straight, corpus);

  auto first = small_config(scratch("split"));
  first.max_iterations = 5;
  const auto half = train(first, corpus);
  auto second = small_config(first.output_dir);
  second.resume = half.final_checkpoint;
  const auto rest = train(second, corpus);

  EXPECT_EQ(rest.final_step, 10);
  ASSERT_EQ(rest.records.size(), 5u);
  EXPECT_EQ(read_lines(first.output_dir / "metrics.log").size(), 10u);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(rest.records[k].total, full.records[5 + k].total) << "step " << 6 + k;
  const auto a = nn::load_checkpoint(full.final_checkpoint);
  const auto b = nn::load_checkpoint(rest.final_checkpoint);
  EXPECT_EQ(a.manifest.checksum, b.manifest.checksum);
}

TEST(Train, ResumeRejectsOtherArchitecture) {
  const auto out = scratch("resume_arch");
  auto config = small_config(out);
  config.max_iterations = 1;
  const auto done = train(config, synthetic_corpus(2, 48));
  auto other = small_config(out, nn::Architecture::kED);
  other.resume = done.final_checkpoint;
  EXPECT_THROW(train(other, synthetic_corpus(2, 48)), ConfigError);
}

TEST(Train, EveryArchitectureTakesAStep) {
  const auto corpus = synthetic_corpus(2, 40);
  for (auto arch : nn::kAllArchitectures) {
    auto config = small_config(scratch("arch"), arch);
    config.batch_size = 2;  // BN needs two values per channel at the 1x1 bridge
    config.max_iterations = 1;
    config.hflip = false;
    const auto result = train(config, corpus);
    ASSERT_EQ(result.records.size(), 1u) << nn::name(arch);
    EXPECT_TRUE(std::isfinite(result.records[0].total)) << nn::name(arch);
    EXPECT_EQ(nn::load_checkpoint(result.final_checkpoint).manifest.architecture, nn::name(arch));
  }
}

TEST(Train, NonFiniteLossStopsWithBatchDump) {
  const auto out = scratch("nonfinite");
  auto config = small_config(out);
  config.adam.lr = 1e30;  // the first update scales weights past float range in the next forward
  config.max_iterations = 4;
  try {
    train(config, synthetic_corpus(2, 48));
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_GE(e.step(), 1);
    EXPECT_EQ(e.identifiers().size(), 2u);
    EXPECT_TRUE(fs::exists(out / ("nonfinite_step_" + std::to_string(e.step()) + ".txt")));
  }
}

TEST(Optimizer, OnlyParametersWithGradientMove) {
  torch::manual_seed(0);
  torch::nn::Linear layer(4, 3);
  torch::optim::Adam adam(layer->parameters(), torch::optim::AdamOptions(1e-4).betas({0.9, 0.999}).eps(1e-8));
  const auto before_w = layer->weight.detach().clone();
  const auto before_b = layer->bias.detach().clone();
  adam.zero_grad();
  layer->forward(torch::randn({5, 4})).sum().backward();
  layer->bias.mutable_grad().zero_();
  adam.step();
  EXPECT_TRUE(torch::equal(layer->bias, before_b));
  EXPECT_FALSE(torch::equal(layer->weight, before_w));
}

TEST(Overfit, SnapshotsAndEarlyStopBookkeeping) {
  const auto corpus = synthetic_corpus(1, 64);
  OverfitOptions options;
  options.architecture = nn::Architecture::kUNetBaseline;
  options.snapshot_at = {0, 3, 5};
  const auto result = overfit_single_pair(corpus[0].image, corpus[0].mask, losses::LossVariant::kBSI, 5, 32, options);
  EXPECT_EQ(result.iterations_run, 5);
  EXPECT_EQ(result.trace.size(), 5u);
  ASSERT_EQ(result.snapshots.size(), 3u);
  EXPECT_EQ(result.snapshots[0].iteration, 0);
  EXPECT_EQ(result.snapshots[1].iteration, 3);
  EXPECT_EQ(result.snapshots[2].iteration, 5);
  EXPECT_EQ(result.final_prediction.size(), (Size{32, 32}));
  EXPECT_THROW(overfit_single_pair(corpus[0].image, corpus[0].mask, losses::LossVariant::kB, 1, 30, options),
               ConfigError);
}

TEST(Overfit, WindowMeans) {
  EXPECT_EQ(window_means({1, 2, 3, 4, 5, 6, 7}, 3), (std::vector<double>{2, 5}));
  EXPECT_TRUE(window_means({1, 2}, 3).empty());
}
