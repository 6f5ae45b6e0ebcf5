#include "basnet/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace basnet {

namespace {

void check_unit_range(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v)) {
      throw CorruptDataError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
    if (v < 0.0 || v > 1.0) {
      throw CorruptDataError(std::string(what) + ": value " + std::to_string(v) + " outside [0,1] at index " +
                             std::to_string(i));
    }
  }
}

void check_dims(int height, int width, const char* what) {
  if (height < 0 || width < 0) {
    throw ShapeError(std::string(what) + ": negative dimensions");
  }
}

}  // namespace

std::string to_string(Size size) { return std::to_string(size.height) + "x" + std::to_string(size.width); }

Mask::Mask(int height, int width, double fill) : size_{height, width} {
  check_dims(height, width, "Mask");
  values_.assign(size_.area(), fill);
  check_unit_range(std::span<const double>(values_.data(), std::min<std::size_t>(values_.size(), 1)), "Mask");
}

Mask::Mask(int height, int width, std::vector<double> values) : size_{height, width}, values_(std::move(values)) {
  check_dims(height, width, "Mask");
  if (values_.size() != size_.area()) {
    throw ShapeError("Mask: expected " + std::to_string(size_.area()) + " values for " + to_string(size_) + ", got " +
                     std::to_string(values_.size()));
  }
  check_unit_range(values_, "Mask");
}

Mask Mask::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int height = static_cast<int>(rows.size());
  const int width = height > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(height) * static_cast<std::size_t>(width));
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != width) {
      throw ShapeError("Mask::from_rows: ragged rows");
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  return Mask(height, width, std::move(values));
}

double Mask::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

double Mask::mean() const { return values_.empty() ? 0.0 : sum() / static_cast<double>(values_.size()); }

Image::Image(int height, int width, std::vector<double> rgb) : size_{height, width}, values_(std::move(rgb)) {
  check_dims(height, width, "Image");
  if (values_.size() != size_.area() * kChannels) {
    throw ShapeError("Image: expected " + std::to_string(size_.area() * kChannels) + " values for " +
                     to_string(size_) + "x3, got " + std::to_string(values_.size()));
  }
  check_unit_range(values_, "Image");
}

void validate(const Sample& sample) {
  if (sample.image.size() != sample.mask.size()) {
    throw ShapeError("sample '" + sample.identifier + "': image " + to_string(sample.image.size()) + " vs mask " +
                     to_string(sample.mask.size()));
  }
}

SideOutputSet::SideOutputSet(std::vector<Mask> maps) : maps_(std::move(maps)) {
  if (maps_.size() != kFullCount && maps_.size() != kFullCount - 1 && maps_.size() != 1) {
    throw ShapeError("SideOutputSet: expected 8, 7 or 1 maps, got " + std::to_string(maps_.size()));
  }
  for (const auto& m : maps_) {
    if (m.size() != maps_.front().size()) {
      throw ShapeError("SideOutputSet: maps differ in size (" + to_string(m.size()) + " vs " +
                       to_string(maps_.front().size()) + ")");
    }
  }
}

std::vector<double> clamp_probability(std::span<const double> values, double eps) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw CorruptDataError("clamp_probability: non-finite value at index " + std::to_string(i));
    }
    out[i] = std::clamp(values[i], eps, 1.0 - eps);
  }
  return out;
}

Mask clamp_probability(const Mask& map, double eps) {
  return Mask(map.height(), map.width(), clamp_probability(map.values(), eps));
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed) {
  return fnv1a64(std::as_bytes(std::span<const char>(text.data(), text.size())), seed);
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace basnet
