#include "evuda/multiscale.hpp"

#include <cmath>
#include <string>

#include "evuda/errors.hpp"

namespace evuda {
namespace {

void check_levels(const Shape& shape, std::size_t num_levels) {
  if (shape.size() != 3) throw ShapeError("build_scales expects [N,C,P], got " + shape_str(shape));
  if (num_levels >= 63 || shape[2] < (std::size_t{1} << num_levels)) {
    throw ConfigError("series length " + std::to_string(shape[2]) + " is too short for " +
                      std::to_string(num_levels) + " down-sampling levels");
  }
}

void check_kernels(std::size_t given, ScaleVariant variant, std::size_t num_levels) {
  const std::size_t want = conv_levels(variant, num_levels);
  if (given != want) {
    throw ConfigError("variant " + std::string(to_string(variant)) + " needs " + std::to_string(want) +
                      " down-sampling kernels, got " + std::to_string(given));
  }
}

PoolKind pool_kind(ScaleVariant v) {
  switch (v) {
    case ScaleVariant::A: return PoolKind::avg;
    case ScaleVariant::R: return PoolKind::random;
    default: return PoolKind::max;
  }
}

}  // namespace

std::string_view to_string(ScaleVariant v) {
  switch (v) {
    case ScaleVariant::L: return "L";
    case ScaleVariant::LM: return "LM";
    case ScaleVariant::M: return "M";
    case ScaleVariant::A: return "A";
    case ScaleVariant::R: return "R";
  }
  return "?";
}

ScaleVariant parse_scale_variant(std::string_view text) {
  for (auto v : {ScaleVariant::L, ScaleVariant::LM, ScaleVariant::M, ScaleVariant::A, ScaleVariant::R}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown down-sampling variant '" + std::string(text) + "'");
}

bool level_uses_conv(ScaleVariant variant, std::size_t level) {
  if (variant == ScaleVariant::L) return true;
  if (variant == ScaleVariant::LM) return level % 2 == 1;
  return false;
}

std::size_t conv_levels(ScaleVariant variant, std::size_t num_levels) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_levels; ++l) n += level_uses_conv(variant, l) ? 1 : 0;
  return n;
}

MultiScaleSet build_scales(const Tensor& x, std::size_t num_levels, ScaleVariant variant, Rng* rng,
                           std::span<const Tensor> kernels) {
  Tape tape;
  std::vector<Var> k;
  for (const auto& kernel : kernels) k.push_back(tape.constant(kernel));
  MultiScaleSet out;
  for (Var v : graph::build_scales(tape.constant(x), num_levels, variant, true, rng, k)) out.scales.push_back(v.value());
  return out;
}

AuxWeights AuxWeights::defaults(std::size_t num_levels) {
  AuxWeights w;
  if (num_levels == 0) {
    w.lambda = {0.5};
    return w;
  }
  w.lambda.assign(num_levels + 1, 0.5 / static_cast<double>(num_levels));
  w.lambda[0] = 0.5;
  return w;
}

void AuxWeights::validate() const {
  for (double l : lambda) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("auxiliary head weights must be finite and non-negative");
  }
}

Tensor mix_features(std::span<const Tensor> per_scale) {
  Tape tape;
  std::vector<Var> parts;
  for (const auto& t : per_scale) parts.push_back(tape.constant(t));
  return graph::mix_features(parts).value();
}

double aux_classification_loss(const Tensor& final_logits, std::span<const Tensor> aux_logits, const LabelBatch& y,
                                const AuxWeights& w) {
  Tape tape;
  std::vector<Var> aux;
  for (const auto& t : aux_logits) aux.push_back(tape.constant(t));
  return graph::aux_classification_loss(tape.constant(final_logits), aux, y, w).value().item();
}

namespace graph {

std::vector<Var> build_scales(Var x, std::size_t num_levels, ScaleVariant variant, bool training, Rng* rng,
                              std::span<const Var> kernels) {
  check_levels(x.shape(), num_levels);
  check_kernels(kernels.size(), variant, num_levels);
  if (variant == ScaleVariant::R && training && rng == nullptr) {
    throw ConfigError("random-pooling down-sampling requires a seeded generator");
  }
  std::vector<Var> scales{x};
  std::size_t next_kernel = 0;
  for (std::size_t level = 0; level < num_levels; ++level) {
    Var prev = scales.back();
    const std::size_t target = prev.shape()[2] / 2;
    Var down;
    if (level_uses_conv(variant, level)) {
      down = ops::conv1d(prev, kernels[next_kernel++], 2, 1);
      // stride-2 conv with padding 1 gives ceil(T/2); keep floor(T/2)
      if (down.shape()[2] != target) down = ops::crop_time(down, target);
    } else {
      PoolKind kind = pool_kind(variant);
      if (kind == PoolKind::random && !training) kind = PoolKind::max;
      down = ops::pool1d(prev, kind, 2, 2, rng);
    }
    scales.push_back(down);
  }
  return scales;
}

Var mix_features(std::span<const Var> per_scale) {
  if (per_scale.empty()) throw ShapeError("mix_features: no scales");
  for (const Var& v : per_scale) {
    if (v.value().rank() != 2) throw ShapeError("mix_features expects [N,F] per scale, got " + shape_str(v.shape()));
    if (v.shape()[0] != per_scale[0].shape()[0]) throw ShapeError("mix_features: inconsistent sample counts");
  }
  if (per_scale.size() == 1) return per_scale[0];
  return ops::concat_cols(per_scale);
}

Var aux_classification_loss(Var final_logits, std::span<const Var> aux_logits, const LabelBatch& y,
                            const AuxWeights& w) {
  if (w.lambda.size() != aux_logits.size()) {
    throw ConfigError("got " + std::to_string(w.lambda.size()) + " auxiliary weights for " +
                      std::to_string(aux_logits.size()) + " auxiliary heads");
  }
  w.validate();
  auto ce = [&](Var logits) {
    if (logits.value().rank() != 2 || logits.shape()[0] != y.size() || logits.shape()[1] != y.num_classes()) {
      throw ShapeError("logits " + shape_str(logits.shape()) + " do not match " + std::to_string(y.size()) +
                       " labels over " + std::to_string(y.num_classes()) + " classes");
    }
    return ops::mean(ops::softmax_cross_entropy(logits, y.labels()));
  };
  Var total = ce(final_logits);
  for (std::size_t i = 0; i < aux_logits.size(); ++i) {
    if (w.lambda[i] == 0.0) continue;
    total = ops::add(total, ops::scale(ce(aux_logits[i]), w.lambda[i]));
  }
  return total;
}

}  // namespace graph
}  // namespace evuda
