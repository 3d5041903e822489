#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "evuda/autodiff.hpp"

namespace evuda {

using Rng = std::mt19937_64;

enum class PoolKind { max, avg, random };

// Value-level kernels. These carry the shape contracts; the differentiable
// versions in `ops` call them for the forward pass.
Tensor conv1d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
Tensor pool1d(const Tensor& input, PoolKind kind, std::size_t window, std::size_t stride,
              Rng* rng = nullptr);

namespace ops {

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double c);
Var scale(Var a, double c);
Var neg(Var a);
Var square(Var a);
Var sqrt(Var a);
Var log(Var a);
Var exp(Var a);
Var relu(Var a);
Var softplus(Var a);
Var lgamma(Var a);
Var digamma(Var a);

// Broadcasting over a [N,F] matrix: *_row takes a [F] vector, *_col a [N] vector.
Var add_row(Var a, Var row);
Var sub_row(Var a, Var row);
Var add_col(Var a, Var col);
Var sub_col(Var a, Var col);
Var div_col(Var a, Var col);

// Reductions.
Var sum(Var a);
Var mean(Var a);
Var sum_axis1(Var a);   // [N,K] -> [N]
Var mean_axis0(Var a);  // [N,F] -> [F]

Var matmul(Var a, Var b);  // [N,F] x [F,K]
Var transpose(Var a);      // [N,F] -> [F,N]
Var concat_cols(std::span<const Var> parts);

Var softmax(Var logits);  // row-wise over [N,K]
Var log_softmax(Var logits);
/// Per-sample cross-entropy of row-wise softmax against integer labels -> [N].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

Var conv1d(Var input, Var kernel, std::size_t stride, std::size_t padding);
/// Pooling over the last axis of [N,C,T]. `rng` is required for PoolKind::random.
Var pool1d(Var input, PoolKind kind, std::size_t window, std::size_t stride, Rng* rng = nullptr);
Var global_avg_pool(Var input);                    // [N,C,T] -> [N,C]
Var crop_time(Var input, std::size_t length);      // keeps the first `length` steps

/// Batch normalization over axis 1 of [N,C] or [N,C,T]. In training mode the
/// batch statistics are used and the running statistics are updated as
/// running = momentum * running + (1 - momentum) * batch (unbiased variance).
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training,
               double momentum = 0.9, double eps = 1e-5);

/// Mean over samples of the p-fold outer product of each row of [N,L];
/// returns a flat tensor of L^p entries.
Var moment_tensor(Var x, int order);

}  // namespace ops
}  // namespace evuda
