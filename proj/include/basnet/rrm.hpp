#pragma once

// Residual refinement modules. Each maps the coarse one-channel logit map to
// a residual at the same resolution; the refined map is
// sigmoid(coarse + residual).
//
//   kOurs          input layer, 4-stage encoder (one conv per stage, 2x2
//                  max-pool between stages), bridge, 4-stage decoder with
//                  bilinear upsampling and skips, 3x3 output layer.
//   kLocalContext  shallow full-resolution stack of three conv+BN+ReLU layers
//                  and a 3x3 output layer.
//   kMultiScale    parallel 3x3 convs with dilations 1, 2, 4, 8 concatenated
//                  and fused by a 1x1 conv.

#include <torch/torch.h>

#include <string_view>
#include <vector>

#include "basnet/prednet.hpp"

namespace basnet::nn {

enum class RefinerKind { kOurs, kLocalContext, kMultiScale };

std::string_view name(RefinerKind kind);

struct RRMVariant {
  RefinerKind kind = RefinerKind::kOurs;
  int width = 64;

  void validate() const;
};

/// One entry per layer on the deepest path, in forward order.
struct ReceptiveLayer {
  int kernel = 1;
  int dilation = 1;
  int stride = 1;    ///< >1 for pooling
  int upsample = 1;  ///< >1 for bilinear upsampling
};

/// Analytic receptive field (pixels, one side) of a layer chain: each layer
/// adds (effective_kernel - 1) * jump, strides multiply the jump and
/// upsampling divides it.
int receptive_field(const std::vector<ReceptiveLayer>& layers);
std::vector<ReceptiveLayer> receptive_chain(const RRMVariant& variant);

class RefinementModuleImpl : public torch::nn::Module {
 public:
  explicit RefinementModuleImpl(RRMVariant variant = {});

  /// Residual logits for a [N, 1, H, W] coarse logit map.
  torch::Tensor residual(const torch::Tensor& coarse_logits);

  /// Encoder activations of kOurs (input layer excluded) followed by the
  /// bridge; empty for the other variants.
  std::vector<torch::Tensor> encoder_features(const torch::Tensor& coarse_logits);

  /// coarse + residual, in the logit domain.
  torch::Tensor forward_logits(const torch::Tensor& coarse_logits);

  /// sigmoid(forward_logits(coarse)).
  torch::Tensor forward(const torch::Tensor& coarse_logits);

  /// Zeroes every parameter so the residual is exactly 0.
  void zero_residual();

  const RRMVariant& variant() const { return variant_; }

 private:
  void check_input(const torch::Tensor& x) const;

  RRMVariant variant_;
  // kOurs
  ConvBnRelu input_{nullptr};
  std::vector<ConvBnRelu> encoder_;
  ConvBnRelu bridge_{nullptr};
  std::vector<ConvBnRelu> decoder_;
  // kLocalContext
  torch::nn::Sequential local_{nullptr};
  // kMultiScale
  std::vector<torch::nn::Sequential> branches_;
  torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(RefinementModule);

}  // namespace basnet::nn
