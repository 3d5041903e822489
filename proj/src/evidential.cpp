#include "evuda/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evuda/errors.hpp"
#include "evuda/ops.hpp"
#include "evuda/special.hpp"

namespace evuda {
namespace {

void check_pair(const Tensor& alpha, const LabelBatch& y) {
  if (alpha.rank() != 2 || alpha.dim(0) != y.size() || alpha.dim(1) != y.num_classes()) {
    throw ShapeError("evidential: alpha " + shape_str(alpha.shape()) + " does not match " +
                     std::to_string(y.size()) + " labels over " + std::to_string(y.num_classes()) +
                     " classes");
  }
}

template <class F>
Tensor on_tape(const Tensor& alpha, F build) {
  Tape tape;
  return build(tape.constant(alpha)).value();
}

}  // namespace

LabelBatch::LabelBatch(std::vector<int> labels, std::size_t num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes), one_hot_(Shape{labels_.size(), num_classes}) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const int c = labels_[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes_) {
      throw DomainError("label " + std::to_string(c) + " outside [0, " + std::to_string(num_classes_) + ")");
    }
    one_hot_[i * num_classes_ + static_cast<std::size_t>(c)] = 1.0;
  }
}

DirichletBatch DirichletBatch::from_alpha(Tensor alpha) {
  if (alpha.rank() != 2) throw ShapeError("Dirichlet parameters must be [N,K], got " + shape_str(alpha.shape()));
  const std::size_t n = alpha.dim(0), k = alpha.dim(1);
  DirichletBatch d;
  d.total = Tensor(Shape{n});
  d.uncertainty_mass = Tensor(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double a = alpha[i * k + j];
      if (!(a >= 1.0) || !std::isfinite(a)) {
        throw DomainError("Dirichlet parameter " + std::to_string(a) + " is not a finite value >= 1");
      }
      s += a;
    }
    d.total[i] = s;
    d.uncertainty_mass[i] = static_cast<double>(k) / s;
  }
  d.alpha = std::move(alpha);
  return d;
}

std::string_view to_string(EvidentialLoss kind) {
  switch (kind) {
    case EvidentialLoss::ml: return "ml";
    case EvidentialLoss::ce: return "ce";
    case EvidentialLoss::mse: return "mse";
  }
  return "?";
}

EvidentialLoss parse_evidential_loss(std::string_view text) {
  if (text == "ml") return EvidentialLoss::ml;
  if (text == "ce") return EvidentialLoss::ce;
  if (text == "mse") return EvidentialLoss::mse;
  throw ConfigError("unknown evidential loss '" + std::string(text) + "'");
}

DirichletBatch evidence_to_alpha(const Tensor& evidence) {
  if (evidence.rank() != 2) throw ShapeError("evidence must be [N,K], got " + shape_str(evidence.shape()));
  Tensor alpha = evidence;
  for (auto& v : alpha.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DomainError("evidence must be finite and non-negative, got " + std::to_string(v));
    }
    v += 1.0;
  }
  return DirichletBatch::from_alpha(std::move(alpha));
}

Tensor predict_mean(const DirichletBatch& d) {
  const std::size_t n = d.size(), k = d.num_classes();
  Tensor p(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] = d.alpha[i * k + j] / d.total[i];
  return p;
}

Tensor uncertainty(const DirichletBatch& d) { return d.uncertainty_mass; }

Tensor loss_ml(const DirichletBatch& d, const LabelBatch& y) {
  return on_tape(d.alpha, [&](Var a) { return graph::loss_ml(a, y); });
}

Tensor loss_ce(const DirichletBatch& d, const LabelBatch& y) {
  return on_tape(d.alpha, [&](Var a) { return graph::loss_ce(a, y); });
}

Tensor loss_mse(const DirichletBatch& d, const LabelBatch& y) {
  return on_tape(d.alpha, [&](Var a) { return graph::loss_mse(a, y); });
}

Tensor evidential_loss(const DirichletBatch& d, const LabelBatch& y, EvidentialLoss kind) {
  return on_tape(d.alpha, [&](Var a) { return graph::evidential_loss(a, y, kind); });
}

Tensor alpha_tilde(const DirichletBatch& d, const LabelBatch& y) {
  return on_tape(d.alpha, [&](Var a) { return graph::alpha_tilde(a, y); });
}

Tensor kl_to_uniform(const Tensor& alpha_tilde) {
  return on_tape(alpha_tilde, [](Var a) { return graph::kl_to_uniform(a); });
}

double anneal_coeff(const AnnealSchedule& s) {
  if (s.horizon == 0) throw ConfigError("annealing horizon must be positive");
  return std::min(1.0, static_cast<double>(s.epoch) / static_cast<double>(s.horizon));
}

double evidential_total(const DirichletBatch& d, const LabelBatch& y, const AnnealSchedule& s,
                        EvidentialLoss kind) {
  return on_tape(d.alpha, [&](Var a) { return graph::evidential_total(a, y, s, kind); }).item();
}

namespace graph {

Var alpha_from_evidence(Var evidence) { return ops::add_scalar(evidence, 1.0); }

Var loss_ml(Var alpha, const LabelBatch& y) {
  check_pair(alpha.value(), y);
  Tape& t = alpha.tape();
  Var s = ops::sum_axis1(alpha);
  Var picked = ops::sum_axis1(ops::mul(t.constant(y.one_hot()), ops::log(alpha)));
  return ops::sub(ops::log(s), picked);
}

Var loss_ce(Var alpha, const LabelBatch& y) {
  check_pair(alpha.value(), y);
  Tape& t = alpha.tape();
  Var s = ops::sum_axis1(alpha);
  Var picked = ops::sum_axis1(ops::mul(t.constant(y.one_hot()), ops::digamma(alpha)));
  return ops::sub(ops::digamma(s), picked);
}

Var loss_mse(Var alpha, const LabelBatch& y) {
  check_pair(alpha.value(), y);
  Tape& t = alpha.tape();
  Var s = ops::sum_axis1(alpha);
  Var p = ops::div_col(alpha, s);
  Var err = ops::sum_axis1(ops::square(ops::sub(t.constant(y.one_hot()), p)));
  Var spread = ops::sum_axis1(ops::sub(p, ops::square(p)));
  return ops::add(err, ops::div(spread, ops::add_scalar(s, 1.0)));
}

Var evidential_loss(Var alpha, const LabelBatch& y, EvidentialLoss kind) {
  switch (kind) {
    case EvidentialLoss::ml: return loss_ml(alpha, y);
    case EvidentialLoss::ce: return loss_ce(alpha, y);
    case EvidentialLoss::mse: return loss_mse(alpha, y);
  }
  throw ConfigError("unknown evidential loss");
}

Var alpha_tilde(Var alpha, const LabelBatch& y) {
  check_pair(alpha.value(), y);
  Tape& t = alpha.tape();
  Tensor keep = y.one_hot();
  for (auto& v : keep.data()) v = 1.0 - v;
  return ops::add(t.constant(y.one_hot()), ops::mul(t.constant(std::move(keep)), alpha));
}

Var kl_to_uniform(Var alpha_tilde) {
  const Tensor& at = alpha_tilde.value();
  if (at.rank() != 2) throw ShapeError("kl_to_uniform expects [N,K], got " + shape_str(at.shape()));
  for (double v : at.data()) {
    if (!(v >= 1.0)) throw DomainError("kl_to_uniform: parameter " + std::to_string(v) + " below 1");
  }
  const double k = static_cast<double>(at.dim(1));
  Var s = ops::sum_axis1(alpha_tilde);
  Var log_norm = ops::sub(ops::add_scalar(ops::lgamma(s), -evuda::lgamma(k)),
                          ops::sum_axis1(ops::lgamma(alpha_tilde)));
  Var shape_term = ops::sum_axis1(
      ops::mul(ops::add_scalar(alpha_tilde, -1.0), ops::sub_col(ops::digamma(alpha_tilde), ops::digamma(s))));
  return ops::add(log_norm, shape_term);
}

Var evidential_total(Var alpha, const LabelBatch& y, const AnnealSchedule& s, EvidentialLoss kind) {
  Var risk = ops::sum(evidential_loss(alpha, y, kind));
  const double lambda = anneal_coeff(s);
  if (lambda == 0.0) return risk;
  return ops::add(risk, ops::scale(ops::sum(kl_to_uniform(alpha_tilde(alpha, y))), lambda));
}

}  // namespace graph
}  // namespace evuda
