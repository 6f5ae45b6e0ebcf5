#pragma once

// Evaluation measures for predicted probability maps against ground truth:
// weighted F-measure, relaxed boundary F-measure, MAE, structure measure and
// mean enhanced-alignment measure, plus dataset aggregation.
//
// Ground truth is binarized at 0.5 wherever a measure needs a binary mask.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "basnet/core.hpp"

namespace basnet::metrics {

struct BoundaryParams {
  int rho = 3;              ///< matching tolerance, pixels (Euclidean)
  double threshold = 0.5;   ///< S is binarized as S >= threshold
};

struct StructureParams {
  double alpha = 0.5;   ///< object/region balance
  double lambda = 1.0;  ///< dispersion weight in the object score
};

struct EvalParams {
  BoundaryParams boundary;
  StructureParams structure;
};

/// Number of thresholds swept by the mean enhanced-alignment measure.
inline constexpr int kEMeasureThresholds = 256;

double mae(const Mask& s, const Mask& g);

/// Empty when g has no foreground (the measure is undefined there).
std::optional<double> weighted_fbeta(const Mask& s, const Mask& g);

double relaxed_boundary_fbeta(const Mask& s, const Mask& g, const BoundaryParams& params = {});

double s_measure(const Mask& s, const Mask& g, const StructureParams& params = {});

/// Enhanced-alignment score of S binarized at `threshold` (S >= threshold).
double e_measure_at(const Mask& s, const Mask& g, double threshold);

/// Mean of e_measure_at over the thresholds k/255, k = 0..255.
double e_measure_mean(const Mask& s, const Mask& g);

MetricReport evaluate_pair(const Mask& s, const Mask& g, const EvalParams& params = {});

struct DatasetReport {
  std::size_t count = 0;
  std::size_t fw_count = 0;  ///< pairs where the weighted F-measure is defined
  MetricReport mean;
};

struct GroupedReport {
  DatasetReport overall;
  std::vector<std::pair<std::string, DatasetReport>> groups;  ///< sorted by attribute name
  std::optional<MetricReport> group_average;                  ///< mean of group means ("Avg." row)
};

/// Attribute name -> indices into `pairs`. A pair may carry several attributes.
using Grouping = std::map<std::string, std::vector<std::size_t>>;

DatasetReport aggregate(std::span<const MetricReport> reports);

/// Arithmetic mean of per-pair reports; throws Error on an empty list.
GroupedReport evaluate_dataset(std::span<const std::pair<Mask, Mask>> pairs, const Grouping& grouping = {},
                               const EvalParams& params = {});

/// Writes the header line "dataset,n,fw_beta,fb_beta,mae,s_alpha,e_phi".
void write_report_header(std::ostream& out);
void write_report_row(std::ostream& out, const std::string& dataset, const DatasetReport& report);
void write_report_row(std::ostream& out, const std::string& dataset, std::size_t n, const MetricReport& report);

namespace detail {

using BinaryMap = std::vector<std::uint8_t>;

BinaryMap binarize(const Mask& map, double threshold);

/// Foreground pixels with at least one in-image 4-neighbour in the background.
BinaryMap boundary(const BinaryMap& fg, Size size);

/// Exact Euclidean nearest-foreground transform. For every pixel, the squared
/// distance to and the row-major index of the closest foreground pixel, ties
/// broken by the smallest (row, col). Index is -1 when there is no foreground.
struct NearestForeground {
  std::vector<std::int64_t> distance_sq;
  std::vector<std::int64_t> index;
};
NearestForeground nearest_foreground(const BinaryMap& fg, Size size);

/// Correlates with the normalized size x size Gaussian, zero padding outside.
std::vector<double> gaussian_filter_zero_pad(std::span<const double> values, Size size, int kernel_size,
                                             double sigma);

}  // namespace detail

}  // namespace basnet::metrics
