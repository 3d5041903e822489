#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "evuda/ops.hpp"

namespace evuda {

/// Statistical alignment method used for the domain loss.
enum class AlignMethod { noadapt, ddc, coral, homm, mmda };

std::string_view to_string(AlignMethod m);
AlignMethod parse_align_method(std::string_view text);

inline constexpr int kDefaultHommOrder = 3;

// Training losses on [N,F] feature batches of the two domains.
double mmd_linear(const Tensor& src, const Tensor& tgt);
double coral(const Tensor& src, const Tensor& tgt);
double homm(const Tensor& src, const Tensor& tgt, int order = kDefaultHommOrder);
double mmda(const Tensor& src, const Tensor& tgt);

// Measurement-only discrepancies.

inline constexpr double kDefaultBandwidthScales[] = {0.5, 1.0, 2.0};

/// Median pairwise distance over the pooled samples, times each of `scales`.
std::vector<double> median_bandwidths(const Tensor& src, const Tensor& tgt,
                                      std::span<const double> scales = kDefaultBandwidthScales);

/// Biased (V-statistic) squared MMD with Gaussian kernels exp(-|x-y|^2 / (2 s^2)),
/// summed over the bandwidth list.
double mmd_rbf(const Tensor& src, const Tensor& tgt, std::span<const double> bandwidths);

inline constexpr std::size_t kDefaultProjections = 50;

/// Mean 1-D W1 distance over random unit projections.
double sliced_wd(const Tensor& src, const Tensor& tgt, std::size_t n_proj, Rng& rng);

/// W1 between two 1-D empirical samples by quantile coupling; unequal sizes
/// are matched on a common grid of max(n, m) mid-point quantiles with linear
/// interpolation between order statistics.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

namespace graph {

Var mmd_linear(Var src, Var tgt);
Var coral(Var src, Var tgt);
Var homm(Var src, Var tgt, int order = kDefaultHommOrder);
Var mmda(Var src, Var tgt);
/// Dispatches on the method; noadapt is rejected (there is no loss to build).
Var domain_loss(Var src, Var tgt, AlignMethod method);

}  // namespace graph
}  // namespace evuda
