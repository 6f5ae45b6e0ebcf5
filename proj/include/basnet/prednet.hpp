#pragma once

// Densely supervised encoder-decoder prediction module.
//
// Encoder: 3x3 input conv (no pooling after it), four ResNet-34 stages
// (blocks 3/4/6/3, stride-2 first block in stages 2-4), then two extra stages
// of three 512-filter basic blocks, each preceded by a 2x2 max-pool.
// Bridge: three dilated 3x3 conv+BN+ReLU layers. Decoder: six stages of three
// conv+BN+ReLU layers fed by [upsampled previous stage, encoder skip].
// Side heads: plain 3x3 conv to one channel, bilinear upsampling to the input
// size; logits are returned and the sigmoid is applied by callers.

#include <torch/torch.h>

#include <array>
#include <map>
#include <string>
#include <vector>

#include "basnet/core.hpp"

namespace basnet::nn {

struct PredNetConfig {
  int input_conv_filters = 64;
  std::array<int, 6> stage_blocks{3, 4, 6, 3, 3, 3};
  std::array<int, 6> stage_filters{64, 128, 256, 512, 512, 512};
  int bridge_filters = 512;
  int bridge_layers = 3;
  int bridge_dilation = 2;
  int decoder_layers = 3;
  /// When false only the decoder stage 1 head exists (no side supervision).
  bool deep_supervision = true;

  /// Number of side heads: 7 with deep supervision, else 1.
  int side_outputs() const { return deep_supervision ? 7 : 1; }
  void validate() const;
  std::string canonical() const;
};

/// Spatial dimensions the prediction module accepts must be multiples of this.
inline constexpr int kInputMultiple = 32;

class ConvBnReluImpl : public torch::nn::Module {
 public:
  ConvBnReluImpl(int in_channels, int out_channels, int dilation = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(ConvBnRelu);

/// Two 3x3 conv+BN layers with an identity shortcut, or a 1x1 conv+BN
/// projection when the stride or channel count changes.
class BasicResBlockImpl : public torch::nn::Module {
 public:
  BasicResBlockImpl(int in_channels, int out_channels, int stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::BatchNorm2d bn2_{nullptr};
  torch::nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(BasicResBlock);

/// Intermediate activations, for inspection and tests.
struct PredictionFeatures {
  std::vector<torch::Tensor> encoder;  ///< stages 1..6
  torch::Tensor bridge;
  std::vector<torch::Tensor> decoder;  ///< stages 1..6 (index 0 = shallowest)
};

class PredictionModuleImpl : public torch::nn::Module {
 public:
  explicit PredictionModuleImpl(PredNetConfig config = {});

  PredictionFeatures features(const torch::Tensor& x);

  /// Side-output logits at input resolution, ordered decoder1..decoder6,
  /// bridge (one entry when deep supervision is off).
  std::vector<torch::Tensor> forward_logits(const torch::Tensor& x);

  /// sigmoid(forward_logits(x)).
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  const PredNetConfig& config() const { return config_; }

 private:
  PredNetConfig config_;
  torch::nn::Conv2d inconv_{nullptr};
  torch::nn::BatchNorm2d inbn_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
  torch::nn::Sequential bridge_{nullptr};
  std::vector<torch::nn::Sequential> decoders_;
  std::vector<torch::nn::Conv2d> side_heads_;  ///< decoder1..6 then bridge
};
TORCH_MODULE(PredictionModule);

/// Throws ShapeError unless x is [N, 3, H, W] with H and W multiples of 32.
void check_network_input(const torch::Tensor& x);

/// Xavier-uniform conv weights, zero biases, unit/zero batch-norm affine.
void xavier_init(torch::nn::Module& module);

/// Parameter names that belong to the input layer and ResNet-34 stages 1-4.
bool is_pretrainable_encoder_parameter(const std::string& name);

/// Copies shape-matching input-layer and stage 1-4 tensors (parameters and
/// batch-norm buffers) from `source`, keyed by this module's parameter names.
/// Returns the number of tensors copied. Throws Error listing every
/// name whose shape disagrees.
std::size_t load_pretrained_encoder(PredictionModuleImpl& module, const std::map<std::string, torch::Tensor>& source);

/// Parameters in stages 1-4 only.
int64_t encoder_stage_parameter_count(PredictionModuleImpl& module, int first_stage = 1, int last_stage = 4);

}  // namespace basnet::nn
