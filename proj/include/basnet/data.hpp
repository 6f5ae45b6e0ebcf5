#pragma once

// Corpus scanning, flip augmentation and the train / eval transforms.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "basnet/core.hpp"

namespace basnet::data {

enum class Split { kTrain, kTest };

struct DatasetSpec {
  std::filesystem::path image_dir;
  std::filesystem::path mask_dir;
  Split split = Split::kTrain;
};

/// Raised when a directory or file the caller named does not exist.
class MissingPathError : public ConfigError {
 public:
  explicit MissingPathError(const std::filesystem::path& path);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Images and masks that failed to pair up by filename stem.
class PairingError : public ConfigError {
 public:
  PairingError(std::vector<std::string> images_without_mask, std::vector<std::string> masks_without_image);
  const std::vector<std::string>& images_without_mask() const { return images_; }
  const std::vector<std::string>& masks_without_image() const { return masks_; }

 private:
  std::vector<std::string> images_;
  std::vector<std::string> masks_;
};

struct PairEntry {
  std::string identifier;  ///< shared filename stem
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
};

/// Pairs files by stem, sorted lexicographically by identifier. An empty
/// corpus logs a warning and returns an empty list.
std::vector<PairEntry> scan_pairs(const DatasetSpec& dataset);

/// Same pairing rule for two directories of masks (prediction vs ground
/// truth).
std::vector<PairEntry> pair_directories(const std::filesystem::path& first, const std::filesystem::path& second);

Sample load_sample(const PairEntry& entry);
std::vector<Sample> load_samples(const std::vector<PairEntry>& entries);

/// Mirror image of a sample; the identifier gains a "#hflip" suffix.
Sample hflip(const Sample& sample);

/// Originals followed by their mirror images.
std::vector<Sample> augment_hflip(const std::vector<Sample>& samples);

struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

struct TransformParams {
  int resize = 320;
  int crop = 288;
  Normalization normalization;

  void validate() const;
};

struct CropOffset {
  int row = 0;
  int col = 0;
  bool operator==(const CropOffset&) const = default;
};

/// [3, H, W] float32 tensor, normalized per channel.
torch::Tensor normalize(const Image& image, const Normalization& norm);

/// Draws a crop offset uniformly in [0, resize - crop] for both axes.
CropOffset draw_crop_offset(std::uint64_t& rng_state, const TransformParams& params);

struct TrainItem {
  torch::Tensor image;  ///< [3, crop, crop]
  Mask mask;            ///< crop x crop, soft values kept
  CropOffset offset;
};

/// Bilinear resize to resize x resize, one crop shared by image and mask,
/// then image normalization. `rng_state` advances; equal states give
/// bit-identical items.
TrainItem train_transform(const Sample& sample, std::uint64_t& rng_state, const TransformParams& params = {});

/// Restores a network-resolution probability map to the source size.
class InverseResize {
 public:
  explicit InverseResize(Size original) : original_(original) {}
  Size original() const { return original_; }
  Mask operator()(const Mask& network_map) const;

 private:
  Size original_;
};

struct EvalInput {
  torch::Tensor image;  ///< [3, resize, resize]
  InverseResize restore;
};

EvalInput eval_transform(const Image& image, const TransformParams& params = {});

/// SplitMix64 step. Used to derive independent per-item streams from a
/// master seed so results do not depend on which worker runs an item.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace basnet::data
