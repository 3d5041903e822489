#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evuda/autodiff.hpp"

namespace evuda {

/// Integer class labels together with the class count K.
class LabelBatch {
 public:
  LabelBatch() = default;
  LabelBatch(std::vector<int> labels, std::size_t num_classes);

  std::span<const int> labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  /// [N,K] indicator matrix with a single 1 per row.
  const Tensor& one_hot() const { return one_hot_; }

 private:
  std::vector<int> labels_;
  std::size_t num_classes_ = 0;
  Tensor one_hot_;
};

/// Per-sample Dirichlet parameters with their totals S and uncertainty u = K / S.
struct DirichletBatch {
  Tensor alpha;  // [N,K], every entry >= 1
  Tensor total;  // [N]
  Tensor uncertainty_mass;  // [N]

  std::size_t num_classes() const { return alpha.dim(1); }
  std::size_t size() const { return alpha.dim(0); }

  /// Validates alpha >= 1 and fills S and u.
  static DirichletBatch from_alpha(Tensor alpha);
};

struct AnnealSchedule {
  std::size_t epoch = 0;
  std::size_t horizon = 10;
};

enum class EvidentialLoss { ml, ce, mse };

std::string_view to_string(EvidentialLoss kind);
EvidentialLoss parse_evidential_loss(std::string_view text);

/// alpha = evidence + 1. Negative or non-finite evidence raises DomainError.
DirichletBatch evidence_to_alpha(const Tensor& evidence);

/// Dirichlet mean alpha / S, row-stochastic.
Tensor predict_mean(const DirichletBatch& d);
Tensor uncertainty(const DirichletBatch& d);

// Per-sample losses, each [N].
Tensor loss_ml(const DirichletBatch& d, const LabelBatch& y);
Tensor loss_ce(const DirichletBatch& d, const LabelBatch& y);
Tensor loss_mse(const DirichletBatch& d, const LabelBatch& y);
Tensor evidential_loss(const DirichletBatch& d, const LabelBatch& y, EvidentialLoss kind);

/// Replaces the true-class entry of each row by 1.
Tensor alpha_tilde(const DirichletBatch& d, const LabelBatch& y);
/// KL[Dir(alpha_tilde) || Dir(1)] per row; entries below 1 raise DomainError.
Tensor kl_to_uniform(const Tensor& alpha_tilde);

/// min(1, epoch / horizon)
double anneal_coeff(const AnnealSchedule& s);

/// Sum over samples of the Bayesian risk plus the annealed KL penalty.
double evidential_total(const DirichletBatch& d, const LabelBatch& y, const AnnealSchedule& s,
                        EvidentialLoss kind);

// Differentiable counterparts operating on tape variables. `alpha` is [N,K].
namespace graph {

Var alpha_from_evidence(Var evidence);
Var loss_ml(Var alpha, const LabelBatch& y);
Var loss_ce(Var alpha, const LabelBatch& y);
Var loss_mse(Var alpha, const LabelBatch& y);
Var evidential_loss(Var alpha, const LabelBatch& y, EvidentialLoss kind);
Var alpha_tilde(Var alpha, const LabelBatch& y);
Var kl_to_uniform(Var alpha_tilde);
Var evidential_total(Var alpha, const LabelBatch& y, const AnnealSchedule& s, EvidentialLoss kind);

}  // namespace graph
}  // namespace evuda
