#include "evuda/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "evuda/errors.hpp"

namespace evuda {
namespace {

double evaluate(const ScalarGraph& fn, const std::vector<Tensor>& points) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(points.size());
  for (const Tensor& p : points) vars.push_back(tape.input(p));
  return fn(tape, vars).value().item();
}

}  // namespace

double grad_check(const ScalarGraph& fn, const std::vector<Tensor>& points, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : points) vars.push_back(tape.input(p));
    Var out = fn(tape, vars);
    analytic = backward(tape, out);
  }
  double worst = 0.0;
  std::vector<Tensor> probe = points;
  for (std::size_t t = 0; t < points.size(); ++t) {
    for (std::size_t i = 0; i < points[t].size(); ++i) {
      const double x0 = points[t][i];
      const double xp = x0 + step;
      const double xm = x0 - step;
      probe[t][i] = xp;
      const double up = evaluate(fn, probe);
      probe[t][i] = xm;
      const double down = evaluate(fn, probe);
      probe[t][i] = x0;
      // divide by the representable spacing, not 2*step
      const double fd = (up - down) / (xp - xm);
      const double a = analytic[t][i];
      worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& point, double step) {
  return grad_check([&fn](Tape& tape, std::span<const Var> in) { return fn(tape, in[0]); },
                    std::vector<Tensor>{point}, step);
}

}  // namespace evuda
