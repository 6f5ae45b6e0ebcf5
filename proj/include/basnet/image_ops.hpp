#pragma once

// Geometric helpers shared by the data pipeline, inference and the service.

#include <span>
#include <vector>

#include "basnet/core.hpp"

namespace basnet {

/// Bilinear resampling with half-pixel centers (the align_corners=false
/// convention). Interpolates as p0 + t * (p1 - p0) so constant regions are
/// reproduced exactly.
Mask resize_bilinear(const Mask& map, Size target);
Image resize_bilinear(const Image& image, Size target);

/// Generic planar variant: `channels` planes stored back to back.
std::vector<double> resize_bilinear_planar(std::span<const double> planes, int channels, Size source, Size target);

Mask hflip(const Mask& map);
Image hflip(const Image& image);

Mask crop(const Mask& map, int row, int col, Size size);
Image crop(const Image& image, int row, int col, Size size);

/// Normalized 1-D Gaussian taps of odd length `size`.
std::vector<double> gaussian_kernel_1d(int size, double sigma);

}  // namespace basnet
