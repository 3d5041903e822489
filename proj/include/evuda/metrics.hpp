#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evuda/tensor.hpp"

namespace evuda {

/// Unweighted mean over all K classes of 2TP / (2TP + FP + FN); a class with
/// no true and no predicted samples scores 0.
double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t classes);

/// counts[i][j]: truth i predicted j.
std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                                         std::size_t classes);

struct ReliabilityBin {
  double lower, upper;  // (lower, upper]
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double accuracy = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

inline constexpr std::size_t kDefaultEceBins = 10;

/// Confidence is the row maximum of `probs`; bins split the attainable
/// confidence range (1/K, 1] into equal right-closed intervals.
CalibrationReport ece(const Tensor& probs, std::span<const int> truth, std::size_t bins = kDefaultEceBins);

struct UncertaintyStats {
  std::string domain;
  double mean = 0.0;
  std::vector<double> histogram;  // probability mass per bin over (0,1]
};

inline constexpr std::size_t kDefaultUncertaintyBins = 30;

UncertaintyStats uncertainty_stats(std::span<const double> u, std::string domain,
                                   std::size_t bins = kDefaultUncertaintyBins);

/// Rank correlation with average ranks for ties. Returns 0 when either
/// argument is constant.
double spearman(std::span<const double> xs, std::span<const double> ys);

}  // namespace evuda
