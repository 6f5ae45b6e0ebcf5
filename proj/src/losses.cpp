#include "basnet/losses.hpp"

#include "basnet/image_ops.hpp"
#include "basnet/log.hpp"
#include "basnet/tensor.hpp"

namespace basnet::losses {

namespace {

namespace F = torch::nn::functional;

torch::Tensor as_nchw(const torch::Tensor& t) {
  switch (t.dim()) {
    case 2:
      return t.unsqueeze(0).unsqueeze(0);
    case 3:
      return t.unsqueeze(1);
    case 4:
      if (t.size(1) != 1) {
        throw ShapeError("loss input must be single-channel, got " + std::to_string(t.size(1)) + " channels");
      }
      return t;
    default:
      throw ShapeError("loss input must be 2-, 3- or 4-d");
  }
}

std::pair<torch::Tensor, torch::Tensor> prepare(const torch::Tensor& s, const torch::Tensor& g, const char* what) {
  auto sn = as_nchw(s);
  auto gn = as_nchw(g).to(sn.dtype());
  if (sn.sizes() != gn.sizes()) {
    throw ShapeError(std::string(what) + ": prediction and ground truth shapes differ");
  }
  return {sn, gn};
}

// Mean over pixels per image, then over the batch.
torch::Tensor image_mean(const torch::Tensor& per_pixel) { return per_pixel.flatten(1).mean(1).mean(); }

torch::Tensor gaussian_window(const SSIMParams& params, const torch::TensorOptions& options) {
  const auto taps = gaussian_kernel_1d(params.window, params.sigma);
  auto g1 = torch::tensor(std::vector<double>(taps.begin(), taps.end()), torch::kFloat64);
  return torch::outer(g1, g1).to(options).view({1, 1, params.window, params.window});
}

torch::Tensor zero_like_scalar(const torch::Tensor& ref) { return torch::zeros({}, ref.options()); }

HybridTerms combine(torch::Tensor bce, torch::Tensor ssim, torch::Tensor iou, const LossConfig& config,
                    const torch::Tensor& ref) {
  HybridTerms out;
  out.bce = config.bce ? std::move(bce) : zero_like_scalar(ref);
  out.ssim = config.ssim ? std::move(ssim) : zero_like_scalar(ref);
  out.iou = config.iou ? std::move(iou) : zero_like_scalar(ref);
  torch::Tensor hybrid;
  for (const auto* term : {&out.bce, &out.ssim, &out.iou}) {
    hybrid = hybrid.defined() ? hybrid + *term : *term;
  }
  out.hybrid = hybrid;
  return out;
}

template <typename PerOutput>
TotalLoss accumulate(std::size_t count, const LossConfig& config, PerOutput&& per_output) {
  config.validate();
  if (count != config.alpha.size()) {
    throw ConfigError("total_loss: " + std::to_string(count) + " outputs but " + std::to_string(config.alpha.size()) +
                      " weights");
  }
  TotalLoss out;
  for (std::size_t k = 0; k < count; ++k) {
    HybridTerms terms = per_output(k);
    auto weighted = terms.hybrid * config.alpha[k];
    out.total = out.total.defined() ? out.total + weighted : weighted;
    out.breakdown.per_output.push_back(terms.values());
  }
  out.breakdown.total = out.total.item<double>();
  return out;
}

}  // namespace

void SSIMParams::validate() const {
  if (window <= 0 || window % 2 == 0) {
    throw ConfigError("SSIM window must be odd and positive");
  }
  if (!(sigma > 0.0) || !(c1 > 0.0) || !(c2 > 0.0)) {
    throw ConfigError("SSIM sigma, C1 and C2 must be positive");
  }
}

std::string_view name(LossVariant variant) {
  switch (variant) {
    case LossVariant::kB:
      return "b";
    case LossVariant::kS:
      return "s";
    case LossVariant::kI:
      return "i";
    case LossVariant::kBS:
      return "bs";
    case LossVariant::kBI:
      return "bi";
    case LossVariant::kSI:
      return "si";
    case LossVariant::kBSI:
      return "bsi";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view text) {
  if (text.starts_with("l_")) {
    text.remove_prefix(2);
  }
  for (LossVariant v : kAllLossVariants) {
    if (name(v) == text) {
      return v;
    }
  }
  throw ConfigError("unknown loss variant '" + std::string(text) + "' (expected one of b, s, i, bs, bi, si, bsi)");
}

LossConfig LossConfig::from_variant(LossVariant variant, std::size_t outputs) {
  const std::string_view n = name(variant);
  LossConfig config;
  config.bce = n.find('b') != std::string_view::npos;
  config.ssim = n.find('s') != std::string_view::npos;
  config.iou = n.find('i') != std::string_view::npos;
  config.alpha.assign(outputs, 1.0);
  return config;
}

void LossConfig::validate() const {
  if (!bce && !ssim && !iou) {
    throw ConfigError("LossConfig: at least one term must be enabled");
  }
  if (alpha.empty()) {
    throw ConfigError("LossConfig: no output weights");
  }
  for (double a : alpha) {
    if (!(a > 0.0)) {
      throw ConfigError("LossConfig: output weights must be positive");
    }
  }
  if (ssim) {
    ssim_params.validate();
  }
}

OutputLoss HybridTerms::values() const {
  return {bce.item<double>(), ssim.item<double>(), iou.item<double>(), hybrid.item<double>()};
}

torch::Tensor bce_loss(const torch::Tensor& s, const torch::Tensor& g) {
  auto [sn, gn] = prepare(s, g, "bce_loss");
  if (!torch::isfinite(sn).all().item<bool>()) {
    throw CorruptDataError("bce_loss: non-finite prediction");
  }
  auto clipped = sn.clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  auto per_pixel = -(gn * torch::log(clipped) + (1.0 - gn) * torch::log(1.0 - clipped));
  return image_mean(per_pixel);
}

torch::Tensor bce_with_logits(const torch::Tensor& logits, const torch::Tensor& g) {
  auto [x, gn] = prepare(logits, g, "bce_with_logits");
  auto per_pixel = torch::clamp_min(x, 0.0) - x * gn + torch::log1p(torch::exp(-torch::abs(x)));
  return image_mean(per_pixel);
}

torch::Tensor ssim_map(const torch::Tensor& s, const torch::Tensor& g, const SSIMParams& params) {
  params.validate();
  auto [x, y] = prepare(s, g, "ssim");
  if (x.size(2) < params.window || x.size(3) < params.window) {
    throw ShapeError("ssim: map " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " is smaller than the " + std::to_string(params.window) + "x" + std::to_string(params.window) +
                     " window");
  }
  const auto window = gaussian_window(params, x.options().requires_grad(false));
  auto mu_x = F::conv2d(x, window);
  auto mu_y = F::conv2d(y, window);
  auto var_x = F::conv2d(x * x, window) - mu_x * mu_x;
  auto var_y = F::conv2d(y * y, window) - mu_y * mu_y;
  auto cov = F::conv2d(x * y, window) - mu_x * mu_y;
  auto numerator = (2.0 * mu_x * mu_y + params.c1) * (2.0 * cov + params.c2);
  auto denominator = (mu_x * mu_x + mu_y * mu_y + params.c1) * (var_x + var_y + params.c2);
  return numerator / denominator;
}

torch::Tensor ssim_loss(const torch::Tensor& s, const torch::Tensor& g, const SSIMParams& params) {
  return 1.0 - image_mean(ssim_map(s, g, params));
}

torch::Tensor iou_loss(const torch::Tensor& s, const torch::Tensor& g) {
  auto [sn, gn] = prepare(s, g, "iou_loss");
  auto inter = (sn * gn).flatten(1).sum(1);
  auto uni = (sn + gn - sn * gn).flatten(1).sum(1);
  auto empty = uni <= 0.0;
  if (empty.any().item<bool>()) {
    log::debug("iou_loss: " + std::to_string(empty.sum().item<int64_t>()) +
               " image(s) with empty prediction and ground truth, scored 0");
  }
  // Keep the unused branch finite so the backward pass stays NaN-free.
  auto safe = torch::where(empty, torch::ones_like(uni), uni);
  auto per_image = torch::where(empty, torch::zeros_like(uni), 1.0 - inter / safe);
  return per_image.mean();
}

HybridTerms hybrid_loss(const torch::Tensor& s, const torch::Tensor& g, const LossConfig& config) {
  config.validate();
  torch::Tensor bce = config.bce ? bce_loss(s, g) : torch::Tensor();
  torch::Tensor ssim = config.ssim ? ssim_loss(s, g, config.ssim_params) : torch::Tensor();
  torch::Tensor iou = config.iou ? iou_loss(s, g) : torch::Tensor();
  return combine(bce, ssim, iou, config, s);
}

HybridTerms hybrid_loss_from_logits(const torch::Tensor& logits, const torch::Tensor& g, const LossConfig& config) {
  config.validate();
  torch::Tensor probs;
  if (config.ssim || config.iou) {
    probs = torch::sigmoid(logits);
  }
  torch::Tensor bce = config.bce ? bce_with_logits(logits, g) : torch::Tensor();
  torch::Tensor ssim = config.ssim ? ssim_loss(probs, g, config.ssim_params) : torch::Tensor();
  torch::Tensor iou = config.iou ? iou_loss(probs, g) : torch::Tensor();
  return combine(bce, ssim, iou, config, logits);
}

TotalLoss total_loss(std::span<const torch::Tensor> outputs, const torch::Tensor& g, const LossConfig& config) {
  return accumulate(outputs.size(), config, [&](std::size_t k) { return hybrid_loss(outputs[k], g, config); });
}

TotalLoss total_loss_from_logits(std::span<const torch::Tensor> logits, const torch::Tensor& g,
                                 const LossConfig& config) {
  return accumulate(logits.size(), config,
                    [&](std::size_t k) { return hybrid_loss_from_logits(logits[k], g, config); });
}

double bce_loss(const Mask& s, const Mask& g) { return bce_loss(to_tensor(s), to_tensor(g)).item<double>(); }

double ssim_loss(const Mask& s, const Mask& g, const SSIMParams& params) {
  return ssim_loss(to_tensor(s), to_tensor(g), params).item<double>();
}

double iou_loss(const Mask& s, const Mask& g) { return iou_loss(to_tensor(s), to_tensor(g)).item<double>(); }

OutputLoss hybrid_loss(const Mask& s, const Mask& g, const LossConfig& config) {
  return hybrid_loss(to_tensor(s), to_tensor(g), config).values();
}

LossBreakdown total_loss(const SideOutputSet& outputs, const Mask& g, const LossConfig& config) {
  std::vector<torch::Tensor> maps;
  for (const auto& m : outputs) {
    maps.push_back(to_tensor(m));
  }
  torch::NoGradGuard no_grad;
  return total_loss(maps, to_tensor(g), config).breakdown;
}

}  // namespace basnet::losses
