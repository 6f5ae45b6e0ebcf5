#pragma once

// Complete segmentation networks for every architecture row of the ablation
// grid, plus the checkpoint archive / manifest format.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "basnet/prednet.hpp"
#include "basnet/rrm.hpp"

namespace basnet::nn {

enum class Architecture { kUNetBaseline, kED, kEDS, kEDS_RRM_LC, kEDS_RRM_MS, kEDS_RRM_Ours };

inline constexpr Architecture kAllArchitectures[] = {Architecture::kUNetBaseline, Architecture::kED,
                                                     Architecture::kEDS,          Architecture::kEDS_RRM_LC,
                                                     Architecture::kEDS_RRM_MS,   Architecture::kEDS_RRM_Ours};

std::string_view name(Architecture arch);  ///< "UNET_BASELINE", "EDS_RRM_OURS", ...
Architecture parse_architecture(std::string_view text);

/// Maps handed to the loss: 1 (U-Net, ED), 7 (EDS), 8 (EDS + refinement).
std::size_t output_count(Architecture arch);
std::optional<RefinerKind> refiner_of(Architecture arch);

struct ModelConfig {
  Architecture architecture = Architecture::kEDS_RRM_Ours;
  PredNetConfig prednet;
  int refiner_width = 64;

  std::string canonical() const;
  std::string hash() const;  ///< hex FNV-1a of canonical()
};

/// Classic symmetric 4-down / 4-up encoder-decoder with a single output.
class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl();
  torch::Tensor forward_logits(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Sequential> down_;
  torch::nn::Sequential bottom_{nullptr};
  std::vector<torch::nn::Sequential> up_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(UNet);

class SegmentationNetImpl : public torch::nn::Module {
 public:
  explicit SegmentationNetImpl(ModelConfig config = {});

  /// Output logits in side-output order: refined (if any), decoder stages
  /// 1..6, bridge; a single map for U-Net and ED.
  std::vector<torch::Tensor> forward_logits(const torch::Tensor& x);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  /// Probability map used as the prediction (index 0 of forward()).
  torch::Tensor predict(const torch::Tensor& x);

  const ModelConfig& config() const { return config_; }
  PredictionModule prediction() const { return prediction_; }
  RefinementModule refinement() const { return refinement_; }

 private:
  ModelConfig config_;
  PredictionModule prediction_{nullptr};
  RefinementModule refinement_{nullptr};
  UNet unet_{nullptr};
};
TORCH_MODULE(SegmentationNet);

/// Builds the network with Xavier initialization drawn from `seed`, then
/// overlays shape-matching encoder tensors from `pretrained` if given.
SegmentationNet build_model(const ModelConfig& config, std::uint64_t seed,
                            const std::map<std::string, torch::Tensor>* pretrained = nullptr);

/// Name -> tensor for all parameters and buffers.
std::map<std::string, torch::Tensor> named_state(torch::nn::Module& module);

// ---- checkpoints ----------------------------------------------------------

struct ManifestEntry {
  std::string kind;  ///< "param" or "buffer"
  std::string name;
  std::vector<int64_t> shape;

  bool operator==(const ManifestEntry&) const = default;
};

/// Sidecar text file describing an archive: architecture, config hash,
/// parameter checksum, training step, and one line per tensor.
struct Manifest {
  std::string architecture;
  std::string config_hash;
  std::string checksum;
  int64_t step = 0;
  std::vector<ManifestEntry> entries;

  void write(const std::filesystem::path& path) const;
  static Manifest read(const std::filesystem::path& path);
};

class ManifestMismatchError : public Error {
 public:
  ManifestMismatchError(const std::string& what, std::vector<std::string> differences);
  const std::vector<std::string>& differences() const { return differences_; }

 private:
  std::vector<std::string> differences_;
};

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);
std::filesystem::path optimizer_path(const std::filesystem::path& checkpoint);

/// FNV-1a over every parameter and buffer (name order, raw bytes).
std::string state_checksum(torch::nn::Module& module);

Manifest make_manifest(SegmentationNetImpl& model, int64_t step);

/// Line-by-line comparison; empty when identical.
std::vector<std::string> diff_entries(const std::vector<ManifestEntry>& expected,
                                      const std::vector<ManifestEntry>& actual);

/// Writes <path> (tensor archive), <path>.manifest and, when an optimizer is
/// given, <path>.optim.
void save_checkpoint(const std::filesystem::path& path, SegmentationNetImpl& model, int64_t step,
                     torch::optim::Optimizer* optimizer = nullptr);

struct LoadedCheckpoint {
  SegmentationNet model{nullptr};
  Manifest manifest;
};

/// Rebuilds the architecture named in the manifest and loads the archive.
/// Throws ManifestMismatchError when the manifest does not describe the
/// built network.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

void load_optimizer(const std::filesystem::path& checkpoint, torch::optim::Optimizer& optimizer);

/// Tensors from a checkpoint keyed by prediction-module parameter name
/// (the "prediction." prefix stripped), for encoder initialization.
std::map<std::string, torch::Tensor> load_encoder_source(const std::filesystem::path& checkpoint);

}  // namespace basnet::nn
