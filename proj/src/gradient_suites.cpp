#include "evuda/gradient_suites.hpp"

#include <algorithm>
#include <random>

#include "evuda/alignment.hpp"
#include "evuda/errors.hpp"
#include "evuda/evidential.hpp"
#include "evuda/grad_check.hpp"
#include "evuda/model.hpp"
#include "evuda/trainer.hpp"

namespace evuda {
namespace {

constexpr double kLossTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;
constexpr std::size_t kModelPoints = 5;

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor gaussian(Shape shape, double mean, double sd, Rng& rng) {
  std::normal_distribution<double> n(mean, sd);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

LabelBatch random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<int> cls(0, static_cast<int>(k) - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = cls(rng);
  return LabelBatch(std::move(y), k);
}

double evidential_point(std::string_view name, Rng& rng) {
  std::uniform_int_distribution<std::size_t> kdist(2, 4);
  const std::size_t k = kdist(rng), n = 3;
  const Tensor alpha = uniform(Shape{n, k}, 1.05, 6.0, rng);
  if (name == "kl") {
    return grad_check([](Tape&, Var a) { return ops::sum(graph::kl_to_uniform(a)); }, alpha);
  }
  const LabelBatch y = random_labels(n, k, rng);
  const EvidentialLoss kind = parse_evidential_loss(name);
  return grad_check([&](Tape&, Var a) { return ops::sum(graph::evidential_loss(a, y, kind)); }, alpha);
}

double alignment_point(std::string_view name, Rng& rng) {
  const AlignMethod method = parse_align_method(name);
  std::uniform_real_distribution<double> shift(-1.0, 1.0), spread(0.5, 2.0);
  const Tensor src = gaussian(Shape{5, 3}, 0.0, 1.0, rng);
  const Tensor tgt = gaussian(Shape{6, 3}, shift(rng), spread(rng), rng);
  return grad_check([&](Tape&, std::span<const Var> in) { return graph::domain_loss(in[0], in[1], method); },
                    {src, tgt});
}

double model_point(Rng& rng) {
  ModelConfig cfg;
  cfg.channels = 1;
  cfg.length = 16;
  cfg.classes = 2;
  cfg.variant = ScaleVariant::M;
  cfg.widths = {4, 4, 4};
  cfg.seed = rng();
  ModelParams mp = init(cfg);
  const Tensor xs = gaussian(Shape{4, 1, 16}, 0.0, 1.0, rng);
  const Tensor xt = gaussian(Shape{4, 1, 16}, 0.5, 1.5, rng);
  const LabelBatch y = random_labels(4, 2, rng);
  const LossKinds kinds{AlignMethod::ddc, EvidentialLoss::ce, AuxWeights::defaults(cfg.levels)};
  std::vector<Tensor> points;
  for (const auto& p : mp.params)
    if (p.trainable) points.push_back(p.value);
  return grad_check(
      [&](Tape& tape, std::span<const Var> in) {
        std::vector<Var> bound;
        std::size_t j = 0;
        for (const auto& p : mp.params) bound.push_back(p.trainable ? in[j++] : tape.constant(p.value));
        const auto s = forward(mp, bound, tape.constant(xs), Mode::train);
        const auto t = forward(mp, bound, tape.constant(xt), Mode::train);
        return combined_loss(s, &t, y, LossWeights{1.0, 1.0, 0.5}, AnnealSchedule{5, 10}, kinds).total;
      },
      points);
}

}  // namespace

const std::vector<std::string>& gradient_suite_names() {
  static const std::vector<std::string> names{"ml", "ce", "mse", "kl", "ddc", "coral", "homm", "mmda", "e2e"};
  return names;
}

SuiteResult run_gradient_suite(std::string_view name, std::size_t points, std::uint64_t seed) {
  const auto& names = gradient_suite_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw ConfigError("unknown gradient suite '" + std::string(name) + "'");
  }
  if (points == 0) throw ConfigError("gradient suites need at least one point");
  Rng rng(seed);
  SuiteResult r{std::string(name), points, 0.0, kLossTolerance};
  const bool evidential = name == "ml" || name == "ce" || name == "mse" || name == "kl";
  if (name == "e2e") {
    r.points = std::min(points, kModelPoints);
    r.tolerance = kModelTolerance;
  }
  for (std::size_t i = 0; i < r.points; ++i) {
    const double err = name == "e2e" ? model_point(rng) : evidential ? evidential_point(name, rng) : alignment_point(name, rng);
    if (!(err <= r.worst)) r.worst = err;  // keeps NaN visible
  }
  return r;
}

}  // namespace evuda
