#pragma once

// Training loop, the ablation grid and the single-pair overfitting
// experiment.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "basnet/data.hpp"
#include "basnet/losses.hpp"
#include "basnet/model.hpp"

namespace basnet::training {

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  nn::Architecture architecture = nn::Architecture::kEDS_RRM_Ours;
  losses::LossVariant loss = losses::LossVariant::kBSI;
  AdamParams adam;
  int batch_size = 8;
  std::int64_t max_iterations = 1000;  // full-scale runs used 400000
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  ///< 0 writes only the final checkpoint
  bool hflip = true;
  int loader_threads = 2;
  data::TransformParams transform;
  data::DatasetSpec dataset;
  std::filesystem::path output_dir = "runs/basnet";
  /// Checkpoint whose prediction-module encoder initializes stages 1-4.
  std::optional<std::filesystem::path> pretrained;
  std::optional<std::filesystem::path> resume;

  void validate() const;
  nn::ModelConfig model_config() const;
  losses::LossConfig loss_config() const;
};

/// Row labels of the ablation grid, e.g. "EDS+RRM_Ours + l_bsi".
const std::vector<std::string>& ablation_rows();

/// Accepts the labels above with "l_" or "ℓ_" and flexible spacing around
/// '+'. Throws ConfigError listing the valid rows otherwise.
TrainConfig build_ablation_config(std::string_view row);

/// Parses a flat "key = value" file ('#' starts a comment). Relative paths
/// resolve against the file's directory. A `row` key expands through
/// build_ablation_config before the other keys apply.
TrainConfig parse_run_config(const std::filesystem::path& path);
TrainConfig parse_run_config_text(std::string_view text, const std::filesystem::path& base_dir = {});

/// One metrics-log line. Loss terms are alpha-weighted sums over outputs.
struct StepRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double bce = 0.0;
  double ssim = 0.0;
  double iou = 0.0;
  double total = 0.0;

  std::string line() const;  ///< "step=.. lr=.. bce=.. ssim=.. iou=.. total=.."
  static StepRecord parse(std::string_view line);
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::int64_t step, std::vector<std::string> identifiers);
  std::int64_t step() const { return step_; }
  const std::vector<std::string>& identifiers() const { return identifiers_; }

 private:
  std::int64_t step_;
  std::vector<std::string> identifiers_;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<StepRecord> records;  ///< steps run by this call
  std::int64_t final_step = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Scans and loads `config.dataset`, then trains.
TrainResult train(const TrainConfig& config, const StepCallback& on_step = {});

/// Trains on samples already in memory (hflip augmentation still applies).
TrainResult train(const TrainConfig& config, const std::vector<Sample>& samples, const StepCallback& on_step = {});

/// Corpus indices of every slot of batch `step`: an independent shuffle per
/// epoch, fixed by the seed.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size, std::size_t corpus_size);

/// Random state of the crop for one slot of one step.
std::uint64_t crop_stream(std::uint64_t seed, std::int64_t step, int slot);

// ---- single-pair overfitting ----------------------------------------------

struct OverfitOptions {
  nn::Architecture architecture = nn::Architecture::kEDS_RRM_Ours;
  std::uint64_t seed = 0;
  AdamParams adam;
  /// Iterations at which the refined output is kept.
  std::vector<std::int64_t> snapshot_at{0, 50, 100, 200, 400, 800, 1600};
  /// Stop as soon as a check meets both targets (checked every
  /// `check_every` iterations). Unset targets disable early stopping.
  std::optional<double> stop_mae;
  std::optional<double> stop_fw;
  std::int64_t check_every = 10;
};

struct Snapshot {
  std::int64_t iteration = 0;
  Mask prediction;
};

struct OverfitResult {
  std::vector<Snapshot> snapshots;
  std::vector<StepRecord> trace;
  std::int64_t iterations_run = 0;
  Mask final_prediction;
  MetricReport final_metrics;
};

/// Trains a fresh network on one pair resized to resolution x resolution.
/// Snapshot k is the network output at iteration k, before that update.
/// Final metrics score the output after the last update against the
/// resized mask.
OverfitResult overfit_single_pair(const Image& image, const Mask& mask, losses::LossVariant loss,
                                  std::int64_t iterations, int resolution, const OverfitOptions& options = {},
                                  const StepCallback& on_step = {});

/// Means of consecutive non-overlapping windows (a trailing partial window
/// is dropped).
std::vector<double> window_means(const std::vector<double>& values, std::size_t window);

}  // namespace basnet::training
