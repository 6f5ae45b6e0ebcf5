#include "basnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace basnet {

torch::Tensor to_tensor(const Mask& map, torch::Dtype dtype) {
  const auto values = map.values();
  auto t = torch::empty({map.height(), map.width()}, torch::kFloat64);
  std::copy(values.begin(), values.end(), t.data_ptr<double>());
  return t.to(dtype);
}

torch::Tensor to_batch(std::span<const Mask> maps, torch::Dtype dtype) {
  if (maps.empty()) {
    throw ShapeError("to_batch: no masks");
  }
  std::vector<torch::Tensor> items;
  items.reserve(maps.size());
  for (const auto& m : maps) {
    if (m.size() != maps.front().size()) {
      throw ShapeError("to_batch: masks differ in size");
    }
    items.push_back(to_tensor(m, dtype).unsqueeze(0));
  }
  return torch::stack(items);
}

Mask to_mask(const torch::Tensor& tensor) {
  auto t = tensor.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  while (t.dim() > 2 && t.size(0) == 1) {
    t = t.squeeze(0);
  }
  if (t.dim() != 2) {
    throw ShapeError("to_mask: expected a single-channel map, got " + std::to_string(tensor.dim()) + "-d tensor");
  }
  const auto* data = t.data_ptr<double>();
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw CorruptDataError("to_mask: non-finite value at index " + std::to_string(i));
    }
    values[i] = std::clamp(data[i], 0.0, 1.0);
  }
  return Mask(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), std::move(values));
}

std::vector<Mask> to_masks(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 1) {
    throw ShapeError("to_masks: expected [N, 1, H, W]");
  }
  std::vector<Mask> out;
  out.reserve(static_cast<std::size_t>(batch.size(0)));
  for (int64_t i = 0; i < batch.size(0); ++i) {
    out.push_back(to_mask(batch[i]));
  }
  return out;
}

}  // namespace basnet
