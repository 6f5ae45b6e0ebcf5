#include "basnet/prednet.hpp"

#include <sstream>

namespace basnet::nn {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2dOptions conv3x3(int in, int out, int stride = 1, int dilation = 1, bool bias = false) {
  return torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(dilation).dilation(dilation).bias(bias);
}

torch::Tensor upsample_to(const torch::Tensor& x, int64_t height, int64_t width) {
  if (x.size(2) == height && x.size(3) == width) {
    return x;
  }
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor pool2x2(const torch::Tensor& x) {
  return F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true));
}

}  // namespace

void PredNetConfig::validate() const {
  if (stage_blocks.size() != 6 || stage_filters.size() != 6) {
    throw ConfigError("PredNetConfig: exactly 6 encoder stages required");
  }
  for (int i = 0; i < 6; ++i) {
    if (stage_blocks[i] <= 0 || stage_filters[i] <= 0) {
      throw ConfigError("PredNetConfig: stage " + std::to_string(i + 1) + " needs positive blocks and filters");
    }
  }
  if (bridge_dilation != 2) {
    throw ConfigError("PredNetConfig: bridge dilation must be 2");
  }
  if (input_conv_filters <= 0 || bridge_filters <= 0 || bridge_layers <= 0 || decoder_layers <= 0) {
    throw ConfigError("PredNetConfig: filters and layer counts must be positive");
  }
}

std::string PredNetConfig::canonical() const {
  std::ostringstream out;
  out << "inconv=" << input_conv_filters << ";blocks=";
  for (int b : stage_blocks) out << b << ',';
  out << ";filters=";
  for (int f : stage_filters) out << f << ',';
  out << ";bridge=" << bridge_filters << 'x' << bridge_layers << "d" << bridge_dilation
      << ";decoder_layers=" << decoder_layers << ";side=" << side_outputs();
  return out.str();
}

ConvBnReluImpl::ConvBnReluImpl(int in_channels, int out_channels, int dilation)
    : conv_(register_module("conv", torch::nn::Conv2d(conv3x3(in_channels, out_channels, 1, dilation)))),
      bn_(register_module("bn", torch::nn::BatchNorm2d(out_channels))) {}

torch::Tensor ConvBnReluImpl::forward(const torch::Tensor& x) { return torch::relu(bn_->forward(conv_->forward(x))); }

BasicResBlockImpl::BasicResBlockImpl(int in_channels, int out_channels, int stride)
    : conv1_(register_module("conv1", torch::nn::Conv2d(conv3x3(in_channels, out_channels, stride)))),
      bn1_(register_module("bn1", torch::nn::BatchNorm2d(out_channels))),
      conv2_(register_module("conv2", torch::nn::Conv2d(conv3x3(out_channels, out_channels)))),
      bn2_(register_module("bn2", torch::nn::BatchNorm2d(out_channels))) {
  if (stride != 1 || in_channels != out_channels) {
    downsample_ = register_module(
        "downsample",
        torch::nn::Sequential(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)),
            torch::nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor BasicResBlockImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1_->forward(conv1_->forward(x)));
  out = bn2_->forward(conv2_->forward(out));
  auto shortcut = downsample_ ? downsample_->forward(x) : x;
  return torch::relu(out + shortcut);
}

PredictionModuleImpl::PredictionModuleImpl(PredNetConfig config) : config_(std::move(config)) {
  config_.validate();
  inconv_ = register_module(
      "inconv", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, config_.input_conv_filters, 3).padding(1).bias(false)));
  inbn_ = register_module("inbn", torch::nn::BatchNorm2d(config_.input_conv_filters));

  int channels = config_.input_conv_filters;
  for (int s = 0; s < 6; ++s) {
    torch::nn::Sequential stage;
    const int filters = config_.stage_filters[s];
    // Stages 2-4 downsample in their first block; 5-6 are preceded by a pool.
    const int stride = (s >= 1 && s <= 3) ? 2 : 1;
    for (int b = 0; b < config_.stage_blocks[s]; ++b) {
      stage->push_back(BasicResBlock(b == 0 ? channels : filters, filters, b == 0 ? stride : 1));
    }
    channels = filters;
    stages_.push_back(register_module("stage" + std::to_string(s + 1), stage));
  }

  bridge_ = torch::nn::Sequential();
  for (int l = 0; l < config_.bridge_layers; ++l) {
    bridge_->push_back(ConvBnRelu(l == 0 ? channels : config_.bridge_filters, config_.bridge_filters,
                                  config_.bridge_dilation));
  }
  register_module("bridge", bridge_);

  // Built deep to shallow; decoder stage i outputs encoder stage i's width.
  decoders_.resize(6);
  int previous = config_.bridge_filters;
  for (int s = 5; s >= 0; --s) {
    const int width = config_.stage_filters[s];
    torch::nn::Sequential stage;
    for (int l = 0; l < config_.decoder_layers; ++l) {
      stage->push_back(ConvBnRelu(l == 0 ? previous + config_.stage_filters[s] : width, width));
    }
    decoders_[s] = stage;
    previous = width;
  }
  for (int s = 0; s < 6; ++s) {
    register_module("decoder" + std::to_string(s + 1), decoders_[s]);
  }

  auto head = [](int in) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)); };
  const int heads = config_.deep_supervision ? 6 : 1;
  for (int s = 0; s < heads; ++s) {
    side_heads_.push_back(register_module("side" + std::to_string(s + 1), head(config_.stage_filters[s])));
  }
  if (config_.deep_supervision) {
    side_heads_.push_back(register_module("side_bridge", head(config_.bridge_filters)));
  }
}

PredictionFeatures PredictionModuleImpl::features(const torch::Tensor& x) {
  check_network_input(x);
  PredictionFeatures out;
  auto h = torch::relu(inbn_->forward(inconv_->forward(x)));
  for (int s = 0; s < 6; ++s) {
    if (s >= 4) {
      h = pool2x2(h);
    }
    h = stages_[s]->forward(h);
    out.encoder.push_back(h);
  }
  out.bridge = bridge_->forward(h);

  out.decoder.resize(6);
  auto d = out.bridge;
  for (int s = 5; s >= 0; --s) {
    const auto& skip = out.encoder[s];
    d = decoders_[s]->forward(torch::cat({upsample_to(d, skip.size(2), skip.size(3)), skip}, 1));
    out.decoder[s] = d;
  }
  return out;
}

std::vector<torch::Tensor> PredictionModuleImpl::forward_logits(const torch::Tensor& x) {
  const auto f = features(x);
  const int64_t h = x.size(2);
  const int64_t w = x.size(3);
  std::vector<torch::Tensor> logits;
  const int decoder_heads = config_.deep_supervision ? 6 : 1;
  for (int s = 0; s < decoder_heads; ++s) {
    logits.push_back(upsample_to(side_heads_[s]->forward(f.decoder[s]), h, w));
  }
  if (config_.deep_supervision) {
    logits.push_back(upsample_to(side_heads_.back()->forward(f.bridge), h, w));
  }
  return logits;
}

std::vector<torch::Tensor> PredictionModuleImpl::forward(const torch::Tensor& x) {
  auto logits = forward_logits(x);
  for (auto& t : logits) {
    t = torch::sigmoid(t);
  }
  return logits;
}

void check_network_input(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) {
    throw ShapeError("network input must be [N, 3, H, W]");
  }
  if (x.size(2) % kInputMultiple != 0 || x.size(3) % kInputMultiple != 0 || x.size(2) == 0 || x.size(3) == 0) {
    throw ShapeError("network input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " is not a multiple of " + std::to_string(kInputMultiple) +
                     " in both dimensions; resize or pad the image first");
  }
}

void xavier_init(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/true)) {
    if (auto* conv = child->as<torch::nn::Conv2d>()) {
      torch::nn::init::xavier_uniform_(conv->weight);
      if (conv->bias.defined()) {
        torch::nn::init::zeros_(conv->bias);
      }
    } else if (auto* bn = child->as<torch::nn::BatchNorm2d>()) {
      torch::nn::init::ones_(bn->weight);
      torch::nn::init::zeros_(bn->bias);
    }
  }
}

bool is_pretrainable_encoder_parameter(const std::string& name) {
  for (const char* prefix : {"inconv.", "inbn.", "stage1.", "stage2.", "stage3.", "stage4."}) {
    if (name.rfind(prefix, 0) == 0) {
      return true;
    }
  }
  return false;
}

std::size_t load_pretrained_encoder(PredictionModuleImpl& module, const std::map<std::string, torch::Tensor>& source) {
  std::vector<std::pair<std::string, torch::Tensor>> targets;
  for (const auto& p : module.named_parameters()) {
    if (is_pretrainable_encoder_parameter(p.key())) {
      targets.emplace_back(p.key(), p.value());
    }
  }
  for (const auto& b : module.named_buffers()) {
    if (is_pretrainable_encoder_parameter(b.key())) {
      targets.emplace_back(b.key(), b.value());
    }
  }

  std::vector<std::string> mismatched;
  for (const auto& [name, target] : targets) {
    auto it = source.find(name);
    if (it != source.end() && it->second.sizes() != target.sizes()) {
      std::ostringstream line;
      line << name << " expected " << target.sizes() << " got " << it->second.sizes();
      mismatched.push_back(line.str());
    }
  }
  if (!mismatched.empty()) {
    std::string message = "pretrained encoder shape mismatch:";
    for (const auto& m : mismatched) {
      message += "\n  " + m;
    }
    throw Error(message);
  }

  torch::NoGradGuard no_grad;
  std::size_t copied = 0;
  for (auto& [name, target] : targets) {
    auto it = source.find(name);
    if (it != source.end()) {
      target.copy_(it->second.to(target.dtype()));
      ++copied;
    }
  }
  return copied;
}

int64_t encoder_stage_parameter_count(PredictionModuleImpl& module, int first_stage, int last_stage) {
  int64_t total = 0;
  for (const auto& p : module.named_parameters()) {
    for (int s = first_stage; s <= last_stage; ++s) {
      if (p.key().rfind("stage" + std::to_string(s) + ".", 0) == 0) {
        total += p.value().numel();
      }
    }
  }
  return total;
}

}  // namespace basnet::nn
