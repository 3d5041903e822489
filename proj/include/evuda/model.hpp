#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evuda/multiscale.hpp"

namespace evuda {

/// Which head supplies reported predictions.
enum class PredictionHead : std::uint8_t { evidential = 0, softmax = 1 };

std::string_view to_string(PredictionHead h);

struct ModelConfig {
  std::size_t channels = 1;
  std::size_t length = 128;
  std::size_t classes = 2;
  /// Down-sampling variant; nullopt disables multi-scale mixing (one scale, no aux heads).
  std::optional<ScaleVariant> variant = ScaleVariant::M;
  std::size_t levels = 2;
  std::vector<std::size_t> widths{64, 64, 64};
  std::vector<std::size_t> kernels{8, 5, 3};
  std::uint64_t seed = 0;
  PredictionHead head = PredictionHead::evidential;

  /// Number of scales actually built (1 when multi-scale mixing is off).
  std::size_t num_scales() const { return variant ? levels + 1 : 1; }
  std::size_t num_levels() const { return variant ? levels : 0; }
  /// Feature width per scale after global average pooling.
  std::size_t feature_width() const { return widths.back(); }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Ordered named parameters. Running batch-norm statistics are stored here
/// as non-trainable entries.
struct ModelParams {
  ModelConfig config;
  std::vector<Parameter> params;

  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  /// Number of trainable scalars.
  std::size_t trainable_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

enum class Mode { train, eval };

struct ForwardOutput {
  std::vector<Var> scale_features;  // [N,F] per scale
  Var mixed;                        // [N, F * scales]
  std::vector<Var> aux_logits;      // [N,K] per scale; empty when multi-scale is off
  Var final_logits;                 // [N,K]
  Var evidence;                     // [N,K], softplus output
};

/// Tape handles for every parameter, in ModelParams order. Trainable
/// parameters are tape inputs, so backward returns their gradients in the
/// same order they appear among trainable entries.
std::vector<Var> bind_params(Tape& tape, const ModelParams& params);

ModelParams init(const ModelConfig& cfg);

/// Builds the forward graph on the tape of `x`. Training mode uses batch
/// statistics and updates the running statistics held in `params`; `rng` is
/// needed for random-pool down-sampling in training mode.
ForwardOutput forward(ModelParams& params, std::span<const Var> bound, Var x, Mode mode, Rng* rng = nullptr);

struct Inference {
  Tensor probs;        // [N,K] from the configured prediction head
  Tensor dirichlet_probs;  // [N,K] Dirichlet mean of the evidential head
  Tensor softmax_probs;    // [N,K] softmax of the classifier head
  Tensor uncertainty;  // [N], K/S of the evidential head
  Tensor features;     // [N, mixed width]
  std::vector<int> predicted;
};

/// Eval-mode forward over `x` in chunks of `batch` samples.
Inference infer(const ModelParams& params, const Tensor& x, std::size_t batch = 256);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

// In-memory forms used by save/load.
std::vector<std::uint8_t> serialize_model(const ModelParams& params);
ModelParams deserialize_model(std::span<const std::uint8_t> bytes);

}  // namespace evuda
