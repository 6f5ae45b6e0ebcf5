#include "basnet/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace basnet {

namespace {

struct Tap {
  int lo;
  int hi;
  double t;
};

// Source coordinate for each destination index, clamped at the borders the
// same way PyTorch's bilinear interpolation (align_corners=false) does.
std::vector<Tap> make_taps(int source, int target) {
  std::vector<Tap> taps(static_cast<std::size_t>(target));
  const double scale = static_cast<double>(source) / static_cast<double>(target);
  for (int i = 0; i < target; ++i) {
    double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
    x = std::max(x, 0.0);
    int lo = std::min(static_cast<int>(std::floor(x)), source - 1);
    int hi = std::min(lo + 1, source - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, x - lo};
  }
  return taps;
}

inline double lerp_exact(double a, double b, double t) { return a + t * (b - a); }

}  // namespace

std::vector<double> resize_bilinear_planar(std::span<const double> planes, int channels, Size source, Size target) {
  if (source.height <= 0 || source.width <= 0 || target.height <= 0 || target.width <= 0) {
    throw ShapeError("resize_bilinear: empty source or target (" + to_string(source) + " -> " + to_string(target) + ")");
  }
  if (planes.size() != source.area() * static_cast<std::size_t>(channels)) {
    throw ShapeError("resize_bilinear: plane buffer does not match source size");
  }
  const auto rows = make_taps(source.height, target.height);
  const auto cols = make_taps(source.width, target.width);
  std::vector<double> out(target.area() * static_cast<std::size_t>(channels));
  for (int ch = 0; ch < channels; ++ch) {
    const double* src = planes.data() + source.area() * static_cast<std::size_t>(ch);
    double* dst = out.data() + target.area() * static_cast<std::size_t>(ch);
    for (int r = 0; r < target.height; ++r) {
      const Tap& ry = rows[static_cast<std::size_t>(r)];
      const double* top = src + static_cast<std::size_t>(ry.lo) * source.width;
      const double* bottom = src + static_cast<std::size_t>(ry.hi) * source.width;
      for (int c = 0; c < target.width; ++c) {
        const Tap& cx = cols[static_cast<std::size_t>(c)];
        const double upper = lerp_exact(top[cx.lo], top[cx.hi], cx.t);
        const double lower = lerp_exact(bottom[cx.lo], bottom[cx.hi], cx.t);
        dst[static_cast<std::size_t>(r) * target.width + c] = lerp_exact(upper, lower, ry.t);
      }
    }
  }
  return out;
}

Mask resize_bilinear(const Mask& map, Size target) {
  if (map.size() == target) {
    return map;
  }
  auto values = resize_bilinear_planar(map.values(), 1, map.size(), target);
  for (double& v : values) {
    v = std::clamp(v, 0.0, 1.0);
  }
  return Mask(target.height, target.width, std::move(values));
}

Image resize_bilinear(const Image& image, Size target) {
  if (image.size() == target) {
    return image;
  }
  const std::size_t area = image.size().area();
  std::vector<double> planes(area * Image::kChannels);
  const auto src = image.values();
  for (std::size_t i = 0; i < area; ++i) {
    for (int ch = 0; ch < Image::kChannels; ++ch) {
      planes[area * static_cast<std::size_t>(ch) + i] = src[i * Image::kChannels + static_cast<std::size_t>(ch)];
    }
  }
  const auto resized = resize_bilinear_planar(planes, Image::kChannels, image.size(), target);
  const std::size_t out_area = target.area();
  std::vector<double> rgb(out_area * Image::kChannels);
  for (std::size_t i = 0; i < out_area; ++i) {
    for (int ch = 0; ch < Image::kChannels; ++ch) {
      rgb[i * Image::kChannels + static_cast<std::size_t>(ch)] =
          std::clamp(resized[out_area * static_cast<std::size_t>(ch) + i], 0.0, 1.0);
    }
  }
  return Image(target.height, target.width, std::move(rgb));
}

Mask hflip(const Mask& map) {
  std::vector<double> out(map.pixel_count());
  const int w = map.width();
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < w; ++c) {
      out[static_cast<std::size_t>(r) * w + c] = map(r, w - 1 - c);
    }
  }
  return Mask(map.height(), w, std::move(out));
}

Image hflip(const Image& image) {
  std::vector<double> out(image.values().size());
  const int w = image.width();
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        out[(static_cast<std::size_t>(r) * w + c) * Image::kChannels + ch] = image(r, w - 1 - c, ch);
      }
    }
  }
  return Image(image.height(), w, std::move(out));
}

Mask crop(const Mask& map, int row, int col, Size size) {
  if (row < 0 || col < 0 || row + size.height > map.height() || col + size.width > map.width()) {
    throw ShapeError("crop: window " + to_string(size) + " at (" + std::to_string(row) + "," + std::to_string(col) +
                     ") exceeds " + to_string(map.size()));
  }
  std::vector<double> out;
  out.reserve(size.area());
  for (int r = 0; r < size.height; ++r) {
    for (int c = 0; c < size.width; ++c) {
      out.push_back(map(row + r, col + c));
    }
  }
  return Mask(size.height, size.width, std::move(out));
}

Image crop(const Image& image, int row, int col, Size size) {
  if (row < 0 || col < 0 || row + size.height > image.height() || col + size.width > image.width()) {
    throw ShapeError("crop: window " + to_string(size) + " exceeds " + to_string(image.size()));
  }
  std::vector<double> out;
  out.reserve(size.area() * Image::kChannels);
  for (int r = 0; r < size.height; ++r) {
    for (int c = 0; c < size.width; ++c) {
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        out.push_back(image(row + r, col + c, ch));
      }
    }
  }
  return Image(size.height, size.width, std::move(out));
}

std::vector<double> gaussian_kernel_1d(int size, double sigma) {
  if (size <= 0 || size % 2 == 0) {
    throw ConfigError("gaussian kernel size must be odd and positive, got " + std::to_string(size));
  }
  if (!(sigma > 0.0)) {
    throw ConfigError("gaussian sigma must be positive");
  }
  std::vector<double> taps(static_cast<std::size_t>(size));
  const int half = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = static_cast<double>(i - half);
    taps[static_cast<std::size_t>(i)] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) {
    t /= total;
  }
  return taps;
}

}  // namespace basnet
