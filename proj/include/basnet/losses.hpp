#pragma once

// Hybrid segmentation loss: pixel-level BCE, patch-level SSIM and map-level
// soft IoU, summed per output and accumulated over deeply supervised outputs.
//
// Tensor overloads take [N, 1, H, W] (or [H, W]) maps and stay differentiable;
// every term is computed per image and then averaged over the batch.

#include <torch/torch.h>

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "basnet/core.hpp"

namespace basnet::losses {

struct SSIMParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;

  void validate() const;
};

/// The loss rows of the ablation grid: which of BCE (b), SSIM (s), IoU (i)
/// are enabled.
enum class LossVariant { kB, kS, kI, kBS, kBI, kSI, kBSI };

std::string_view name(LossVariant variant);  ///< "b", "bsi", ...
LossVariant parse_loss_variant(std::string_view text);
inline constexpr LossVariant kAllLossVariants[] = {LossVariant::kB,  LossVariant::kS,  LossVariant::kI,  LossVariant::kBS,
                                                   LossVariant::kBI, LossVariant::kSI, LossVariant::kBSI};

struct LossConfig {
  bool bce = true;
  bool ssim = true;
  bool iou = true;
  std::vector<double> alpha = std::vector<double>(8, 1.0);  ///< one weight per side output
  SSIMParams ssim_params;

  static LossConfig from_variant(LossVariant variant, std::size_t outputs = 8);
  void validate() const;
};

// ---- differentiable tensor API -------------------------------------------

torch::Tensor bce_loss(const torch::Tensor& s, const torch::Tensor& g);
/// Same value as bce_loss(sigmoid(logits), g) without the log guard,
/// via max(x,0) - x*g + log(1 + exp(-|x|)).
torch::Tensor bce_with_logits(const torch::Tensor& logits, const torch::Tensor& g);

/// Per-position SSIM over dense (stride 1, no padding) Gaussian-weighted
/// windows, shape [N, 1, H-window+1, W-window+1].
torch::Tensor ssim_map(const torch::Tensor& s, const torch::Tensor& g, const SSIMParams& params = {});
torch::Tensor ssim_loss(const torch::Tensor& s, const torch::Tensor& g, const SSIMParams& params = {});

/// 1 - sum(S*G) / sum(S + G - S*G). An image where both maps are all zero
/// contributes 0.
torch::Tensor iou_loss(const torch::Tensor& s, const torch::Tensor& g);

struct HybridTerms {
  torch::Tensor bce;
  torch::Tensor ssim;
  torch::Tensor iou;
  torch::Tensor hybrid;

  OutputLoss values() const;
};

HybridTerms hybrid_loss(const torch::Tensor& s, const torch::Tensor& g, const LossConfig& config);
/// BCE from logits, SSIM and IoU from sigmoid(logits).
HybridTerms hybrid_loss_from_logits(const torch::Tensor& logits, const torch::Tensor& g, const LossConfig& config);

struct TotalLoss {
  torch::Tensor total;
  LossBreakdown breakdown;
};

/// Sum over outputs of alpha_k * hybrid_k. `outputs.size()` must equal
/// `config.alpha.size()`.
TotalLoss total_loss(std::span<const torch::Tensor> outputs, const torch::Tensor& g, const LossConfig& config);
TotalLoss total_loss_from_logits(std::span<const torch::Tensor> logits, const torch::Tensor& g,
                                 const LossConfig& config);

// ---- value API on masks (double precision) --------------------------------

double bce_loss(const Mask& s, const Mask& g);
double ssim_loss(const Mask& s, const Mask& g, const SSIMParams& params = {});
double iou_loss(const Mask& s, const Mask& g);
OutputLoss hybrid_loss(const Mask& s, const Mask& g, const LossConfig& config);
LossBreakdown total_loss(const SideOutputSet& outputs, const Mask& g, const LossConfig& config);

}  // namespace basnet::losses
