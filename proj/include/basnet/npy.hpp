#pragma once

// Minimal NumPy .npy (format 1.0) reader and writer for C-ordered tensors.
// Supported dtypes: float32, float64, int64.

#include <torch/torch.h>

#include <filesystem>

namespace basnet::npy {

void write(const std::filesystem::path& path, const torch::Tensor& tensor);
torch::Tensor read(const std::filesystem::path& path);

}  // namespace basnet::npy
