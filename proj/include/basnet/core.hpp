#pragma once

// Shared value types for images, masks and per-output loss / metric records.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace basnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-range numeric data.
class CorruptDataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Size {
  int height = 0;
  int width = 0;

  std::size_t area() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  auto operator<=>(const Size&) const = default;
};

std::string to_string(Size size);

/// Log guard applied to probabilities before taking logarithms.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// Single-channel real map in [0,1]. Used both for ground-truth masks and
/// predicted probability maps. Immutable once constructed.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, double fill = 0.0);
  Mask(int height, int width, std::vector<double> values);

  /// Row-major literal, mostly for tests: Mask::from_rows({{1, 0}, {0, 1}}).
  static Mask from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int height() const { return size_.height; }
  int width() const { return size_.width; }
  Size size() const { return size_; }
  std::size_t pixel_count() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double operator()(int row, int col) const { return values_[index(row, col)]; }
  std::span<const double> values() const { return values_; }

  double sum() const;
  double mean() const;

  bool operator==(const Mask&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(size_.width) + static_cast<std::size_t>(col);
  }

  Size size_{};
  std::vector<double> values_;
};

/// H x W x 3 RGB picture with interleaved channels in [0,1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, std::vector<double> rgb);

  int height() const { return size_.height; }
  int width() const { return size_.width; }
  Size size() const { return size_; }
  bool empty() const { return values_.empty(); }

  double operator()(int row, int col, int channel) const {
    return values_[(static_cast<std::size_t>(row) * static_cast<std::size_t>(size_.width) + static_cast<std::size_t>(col)) *
                       kChannels +
                   static_cast<std::size_t>(channel)];
  }
  std::span<const double> values() const { return values_; }

  bool operator==(const Image&) const = default;

 private:
  Size size_{};
  std::vector<double> values_;
};

struct Sample {
  Image image;
  Mask mask;
  std::string identifier;
  Size original_size;
};

/// Checks the image/mask spatial agreement a Sample requires.
void validate(const Sample& sample);

/// Ordered side outputs: index 0 is the refined map, then decoder stages
/// 1..6 and the bridge. Ablations without refinement carry 7 maps (decoder
/// stages and bridge) or a single map.
class SideOutputSet {
 public:
  static constexpr std::size_t kFullCount = 8;

  explicit SideOutputSet(std::vector<Mask> maps);

  std::size_t size() const { return maps_.size(); }
  const Mask& operator[](std::size_t k) const { return maps_[k]; }
  const Mask& final_output() const { return maps_.front(); }
  Size map_size() const { return maps_.front().size(); }
  auto begin() const { return maps_.begin(); }
  auto end() const { return maps_.end(); }

 private:
  std::vector<Mask> maps_;
};

struct OutputLoss {
  double bce = 0.0;
  double ssim = 0.0;
  double iou = 0.0;
  double hybrid = 0.0;
};

struct LossBreakdown {
  std::vector<OutputLoss> per_output;
  double total = 0.0;
};

/// The five evaluation measures for one prediction or one aggregate.
/// `fw_beta` is empty when the weighted F-measure is undefined (all-background
/// ground truth).
struct MetricReport {
  std::optional<double> fw_beta;
  double fb_beta = 0.0;
  double mae = 0.0;
  double s_alpha = 0.0;
  double e_phi = 0.0;
};

/// Clips every value to [eps, 1 - eps]. Throws CorruptDataError on
/// non-finite input.
std::vector<double> clamp_probability(std::span<const double> values, double eps = kProbabilityEpsilon);
Mask clamp_probability(const Mask& map, double eps = kProbabilityEpsilon);

/// FNV-1a 64-bit, used for config hashes and parameter checksums.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace basnet
