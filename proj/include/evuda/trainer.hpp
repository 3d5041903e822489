#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evuda/alignment.hpp"
#include "evuda/data.hpp"
#include "evuda/evidential.hpp"
#include "evuda/model.hpp"
#include "evuda/multiscale.hpp"

namespace evuda {

struct LossWeights {
  double lambda1 = 1.0;  // classification
  double lambda2 = 0.0;  // domain alignment
  double lambda3 = 0.0;  // evidential

  /// lambda1 = 1, lambda2 per method (ddc 1.0, coral 1.0, homm 0.1, mmda 0.5),
  /// lambda3 = 0.1.
  static LossWeights defaults(AlignMethod method);
  void validate() const;
};

inline constexpr double kDefaultLambda3Grid[] = {0.01, 0.1, 0.5, 1.0};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  /// nullopt disables the evidential loss.
  std::optional<EvidentialLoss> evidential = EvidentialLoss::ce;
  AlignMethod method = AlignMethod::noadapt;
  LossWeights weights;
  /// Empty means AuxWeights::defaults for the model's level count.
  std::vector<double> aux_weights;
  std::size_t anneal_horizon = 10;
  std::uint64_t seed = 0;
  /// Wall-clock per epoch is only written to the log when set, so logs of
  /// identical runs stay byte-identical by default.
  bool record_timing = false;

  void validate() const;
  /// True when the evidential term takes part in training.
  bool evidential_active() const { return evidential.has_value() && weights.lambda3 > 0.0; }
  bool alignment_active() const { return method != AlignMethod::noadapt && weights.lambda2 > 0.0; }
};

struct LossBreakdown {
  double cls = 0.0;
  double domain = 0.0;
  double evidential = 0.0;  // already divided by the batch size
  double total = 0.0;
};

struct LossTerms {
  Var total;
  LossBreakdown values;
};

struct LossKinds {
  AlignMethod method = AlignMethod::noadapt;
  std::optional<EvidentialLoss> evidential;
  AuxWeights aux;
};

/// total = l1 * cls + l2 * domain + l3 * (evidential / N). The domain term is
/// built on the mixed features of both domains when `tgt` is given and the
/// method is not noadapt; terms whose weight is 0 are not built. Throws
/// NumericalAbort naming the first non-finite component.
LossTerms combined_loss(const ForwardOutput& src, const ForwardOutput* tgt, const LabelBatch& y,
                        const LossWeights& w, const AnnealSchedule& s, const LossKinds& kinds);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown mean;
  double anneal = 0.0;
  std::size_t batches = 0;
  std::optional<double> source_val_f1;
  std::optional<double> seconds;
};

struct TrainLog {
  std::string config_json;  // echo of model and training config
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;

  /// Line-delimited JSON records: config, warnings, then one per epoch.
  std::string to_jsonl() const;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// `target` may be null when the method is noadapt; its labels are never read.
/// `source_val`, when given, is scored with macro-F1 after every epoch.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const TimeSeriesBatch& source,
                  const TimeSeriesBatch* target, const TimeSeriesBatch* source_val = nullptr);

struct Lambda3Row {
  double lambda3 = 0.0;
  std::optional<double> target_f1;  // empty when the run failed
  std::string failure;
};

struct Lambda3Selection {
  double best = 0.0;
  std::vector<Lambda3Row> table;
};

/// Trains one model per grid value and scores macro-F1 on the labeled
/// `target_val`; ties go to the smaller lambda3. Runs that abort numerically
/// are marked failed.
Lambda3Selection select_lambda3(std::span<const double> grid, const ModelConfig& model_cfg, const TrainConfig& cfg,
                                const TimeSeriesBatch& source, const TimeSeriesBatch& target,
                                const TimeSeriesBatch& target_val);

std::string config_json(const ModelConfig& m, const TrainConfig& t);

}  // namespace evuda
