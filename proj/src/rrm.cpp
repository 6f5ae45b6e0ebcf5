#include "basnet/rrm.hpp"

#include <numeric>

namespace basnet::nn {

namespace F = torch::nn::functional;

namespace {

constexpr int kOursStages = 4;
constexpr int kLocalLayers = 3;
constexpr int kDilations[] = {1, 2, 4, 8};

torch::Tensor upsample_like(const torch::Tensor& x, const torch::Tensor& ref) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{ref.size(2), ref.size(3)})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor pool2x2(const torch::Tensor& x) {
  return F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true));
}

}  // namespace

std::string_view name(RefinerKind kind) {
  switch (kind) {
    case RefinerKind::kOurs:
      return "RRM_Ours";
    case RefinerKind::kLocalContext:
      return "RRM_LC";
    case RefinerKind::kMultiScale:
      return "RRM_MS";
  }
  return "?";
}

void RRMVariant::validate() const {
  if (width <= 0) {
    throw ConfigError("RRMVariant: width must be positive");
  }
}

int receptive_field(const std::vector<ReceptiveLayer>& layers) {
  // Tracked in units of 1/jump_denominator to keep upsampling exact.
  int field = 1;
  int jump_num = 1;
  int jump_den = 1;
  for (const auto& l : layers) {
    const int effective = l.dilation * (l.kernel - 1) + 1;
    field += (effective - 1) * jump_num / jump_den;
    jump_num *= l.stride;
    jump_den *= l.upsample;
    const int common = std::gcd(jump_num, jump_den);
    jump_num /= common;
    jump_den /= common;
  }
  return field;
}

std::vector<ReceptiveLayer> receptive_chain(const RRMVariant& variant) {
  std::vector<ReceptiveLayer> chain;
  switch (variant.kind) {
    case RefinerKind::kOurs:
      chain.push_back({3});
      for (int s = 0; s < kOursStages; ++s) {
        chain.push_back({3});
        chain.push_back({2, 1, 2});
      }
      chain.push_back({3});
      for (int s = 0; s < kOursStages; ++s) {
        chain.push_back({1, 1, 1, 2});
        chain.push_back({3});
      }
      chain.push_back({3});
      break;
    case RefinerKind::kLocalContext:
      for (int l = 0; l < kLocalLayers + 1; ++l) {
        chain.push_back({3});
      }
      break;
    case RefinerKind::kMultiScale:
      chain.push_back({3, kDilations[std::size(kDilations) - 1]});
      chain.push_back({1});
      break;
  }
  return chain;
}

RefinementModuleImpl::RefinementModuleImpl(RRMVariant variant) : variant_(variant) {
  variant_.validate();
  const int w = variant_.width;
  switch (variant_.kind) {
    case RefinerKind::kOurs:
      input_ = register_module("input", ConvBnRelu(1, w));
      for (int s = 0; s < kOursStages; ++s) {
        encoder_.push_back(register_module("encoder" + std::to_string(s + 1), ConvBnRelu(w, w)));
      }
      bridge_ = register_module("bridge", ConvBnRelu(w, w));
      for (int s = 0; s < kOursStages; ++s) {
        decoder_.push_back(register_module("decoder" + std::to_string(s + 1), ConvBnRelu(2 * w, w)));
      }
      break;
    case RefinerKind::kLocalContext: {
      local_ = torch::nn::Sequential();
      for (int l = 0; l < kLocalLayers; ++l) {
        local_->push_back(ConvBnRelu(l == 0 ? 1 : w, w));
      }
      register_module("local", local_);
      break;
    }
    case RefinerKind::kMultiScale:
      for (int d : kDilations) {
        branches_.push_back(register_module("branch_d" + std::to_string(d), torch::nn::Sequential(ConvBnRelu(1, w, d))));
      }
      break;
  }
  const bool fuse = variant_.kind == RefinerKind::kMultiScale;
  const int in = fuse ? w * static_cast<int>(std::size(kDilations)) : w;
  output_ = register_module("output",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, fuse ? 1 : 3).padding(fuse ? 0 : 1)));
}

void RefinementModuleImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != 1) {
    throw ShapeError("refinement input must be a [N, 1, H, W] logit map");
  }
}

std::vector<torch::Tensor> RefinementModuleImpl::encoder_features(const torch::Tensor& coarse_logits) {
  check_input(coarse_logits);
  std::vector<torch::Tensor> out;
  if (variant_.kind != RefinerKind::kOurs) {
    return out;
  }
  auto h = input_->forward(coarse_logits);
  for (int s = 0; s < kOursStages; ++s) {
    h = encoder_[s]->forward(s == 0 ? h : pool2x2(h));
    out.push_back(h);
  }
  out.push_back(bridge_->forward(pool2x2(h)));
  return out;
}

torch::Tensor RefinementModuleImpl::residual(const torch::Tensor& coarse_logits) {
  check_input(coarse_logits);
  switch (variant_.kind) {
    case RefinerKind::kOurs: {
      auto feats = encoder_features(coarse_logits);
      auto d = feats.back();
      for (int s = kOursStages - 1; s >= 0; --s) {
        const auto& skip = feats[s];
        d = decoder_[s]->forward(torch::cat({upsample_like(d, skip), skip}, 1));
      }
      return output_->forward(d);
    }
    case RefinerKind::kLocalContext:
      return output_->forward(local_->forward(coarse_logits));
    case RefinerKind::kMultiScale: {
      std::vector<torch::Tensor> outs;
      for (auto& b : branches_) {
        outs.push_back(b->forward(coarse_logits));
      }
      return output_->forward(torch::cat(outs, 1));
    }
  }
  throw Error("unknown refinement variant");
}

torch::Tensor RefinementModuleImpl::forward_logits(const torch::Tensor& coarse_logits) {
  return coarse_logits + residual(coarse_logits);
}

torch::Tensor RefinementModuleImpl::forward(const torch::Tensor& coarse_logits) {
  return torch::sigmoid(forward_logits(coarse_logits));
}

void RefinementModuleImpl::zero_residual() {
  torch::NoGradGuard no_grad;
  for (auto& p : parameters()) {
    p.zero_();
  }
}

}  // namespace basnet::nn
