#pragma once

// Test-only reference computations. Nothing here calls into the library's
// loss code, so agreement is evidence rather than tautology.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct DirichletMc {
  Estimate ce;    // E[-ln p_y]
  Estimate mse;   // E[||y - p||^2]
  Estimate ml;    // -ln E[p_y]  (standard error by the delta method)
};

/// Monte-Carlo estimates of the three Bayesian-risk integrals under Dir(alpha).
inline DirichletMc dirichlet_mc(const std::vector<double>& alpha, int label, std::size_t draws,
                                std::mt19937_64& rng) {
  const std::size_t k = alpha.size();
  std::vector<std::gamma_distribution<double>> gammas;
  for (double a : alpha) gammas.emplace_back(a, 1.0);
  double s_ce = 0, s2_ce = 0, s_mse = 0, s2_mse = 0, s_p = 0, s2_p = 0;
  std::vector<double> g(k);
  for (std::size_t d = 0; d < draws; ++d) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (g[j] = gammas[j](rng));
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = g[j] / total;
      const double diff = (static_cast<int>(j) == label ? 1.0 : 0.0) - p;
      sq += diff * diff;
    }
    const double py = g[static_cast<std::size_t>(label)] / total;
    const double ce = -std::log(py);
    s_ce += ce;
    s2_ce += ce * ce;
    s_mse += sq;
    s2_mse += sq * sq;
    s_p += py;
    s2_p += py * py;
  }
  const double n = static_cast<double>(draws);
  auto finish = [n](double s, double s2) {
    const double m = s / n;
    const double var = (s2 / n - m * m) * n / (n - 1.0);
    return Estimate{m, std::sqrt(var / n)};
  };
  DirichletMc out;
  out.ce = finish(s_ce, s2_ce);
  out.mse = finish(s_mse, s2_mse);
  const Estimate p = finish(s_p, s2_p);
  out.ml = Estimate{-std::log(p.mean), p.std_error / p.mean};
  return out;
}

/// Central finite difference gradient of a scalar function of a flat vector.
template <class F>
std::vector<double> fd_gradient(F f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace oracle
