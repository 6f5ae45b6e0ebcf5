#pragma once

// Conversions between the value types in core.hpp and LibTorch tensors.

#include <torch/torch.h>

#include <span>
#include <vector>

#include "basnet/core.hpp"

namespace basnet {

/// [H, W] tensor of the given dtype.
torch::Tensor to_tensor(const Mask& map, torch::Dtype dtype = torch::kFloat64);

/// [N, 1, H, W] stack; all masks must share one size.
torch::Tensor to_batch(std::span<const Mask> maps, torch::Dtype dtype = torch::kFloat32);

/// Accepts [H, W], [1, H, W] or [1, 1, H, W]. Values are clamped into [0, 1]
/// to absorb float rounding at the ends of the sigmoid range.
Mask to_mask(const torch::Tensor& tensor);

/// Splits [N, 1, H, W] into N masks.
std::vector<Mask> to_masks(const torch::Tensor& batch);

}  // namespace basnet
