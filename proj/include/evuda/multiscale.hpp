#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "evuda/evidential.hpp"
#include "evuda/ops.hpp"

namespace evuda {

/// Down-sampling used between successive scales: learnable conv (L),
/// max-then-conv alternation (LM), max/avg/random pooling (M/A/R).
enum class ScaleVariant { L, LM, M, A, R };

std::string_view to_string(ScaleVariant v);
ScaleVariant parse_scale_variant(std::string_view text);

/// True when reduction `level` (0-based) of `variant` is a stride-2 conv.
bool level_uses_conv(ScaleVariant variant, std::size_t level);
/// Number of [C,C,3] down-sampling kernels that `build_scales` consumes.
std::size_t conv_levels(ScaleVariant variant, std::size_t num_levels);

struct MultiScaleSet {
  std::vector<Tensor> scales;  // scales[m] is [N,C,floor(P/2^m)]
};

/// Value-level scale pyramid. `kernels` supplies one kernel per conv level
/// (see conv_levels); `rng` is required for variant R.
MultiScaleSet build_scales(const Tensor& x, std::size_t num_levels, ScaleVariant variant, Rng* rng = nullptr,
                           std::span<const Tensor> kernels = {});

/// Per-scale weights of the auxiliary classification heads.
struct AuxWeights {
  std::vector<double> lambda;

  /// {0.5, 0.25, 0.25} for two levels; in general 0.5 on scale 0 and the
  /// remaining 0.5 split evenly over the coarser scales.
  static AuxWeights defaults(std::size_t num_levels);
  void validate() const;
};

Tensor mix_features(std::span<const Tensor> per_scale);

double aux_classification_loss(const Tensor& final_logits, std::span<const Tensor> aux_logits, const LabelBatch& y,
                                const AuxWeights& w);

namespace graph {

/// Differentiable scale pyramid. In eval mode (training = false) variant R
/// pools with max instead of sampling.
std::vector<Var> build_scales(Var x, std::size_t num_levels, ScaleVariant variant, bool training, Rng* rng,
                              std::span<const Var> kernels);

Var mix_features(std::span<const Var> per_scale);

Var aux_classification_loss(Var final_logits, std::span<const Var> aux_logits, const LabelBatch& y,
                            const AuxWeights& w);

}  // namespace graph
}  // namespace evuda
