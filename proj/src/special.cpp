#include "evuda/special.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "evuda/errors.hpp"

namespace evuda {
namespace {

// Arguments at or above this value go straight to the asymptotic series.
constexpr double kAsymptoticStart = 16.0;

// Bernoulli numbers B_2 .. B_16.
constexpr double kBernoulli[] = {1.0 / 6.0,    -1.0 / 30.0,  1.0 / 42.0,   -1.0 / 30.0,
                                 5.0 / 66.0,   -691.0 / 2730.0, 7.0 / 6.0, -3617.0 / 510.0};

void require_positive(double x, const char* name) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(name) + " requires a positive finite argument, got " +
                      std::to_string(x));
  }
}

}  // namespace

double lgamma(double x) {
  require_positive(x, "lgamma");
  // lgamma(x) = lgamma(x + n) - log(x (x+1) ... (x+n-1))
  double shift_log = 0.0;
  double prod = 1.0;
  while (x < kAsymptoticStart) {
    prod *= x;
    x += 1.0;
    if (prod > 1e280) {
      shift_log += std::log(prod);
      prod = 1.0;
    }
  }
  shift_log += std::log(prod);

  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = 0.0;
  double power = inv;  // x^-(2k-1)
  for (int k = 1; k <= 8; ++k) {
    series += kBernoulli[k - 1] / (2.0 * k * (2.0 * k - 1.0)) * power;
    power *= inv2;
  }
  const double stirling =
      (x - 0.5) * std::log(x) - x + 0.5 * std::log(2.0 * std::numbers::pi) + series;
  return stirling - shift_log;
}

double digamma(double x) {
  require_positive(x, "digamma");
  double shift = 0.0;
  while (x < kAsymptoticStart) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv2 = 1.0 / (x * x);
  double series = 0.0;
  double power = inv2;  // x^-2k
  for (int k = 1; k <= 8; ++k) {
    series += kBernoulli[k - 1] / (2.0 * k) * power;
    power *= inv2;
  }
  return shift + std::log(x) - 0.5 / x - series;
}

double trigamma(double x) {
  require_positive(x, "trigamma");
  double shift = 0.0;
  while (x < kAsymptoticStart) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = 0.0;
  double power = inv2 * inv;  // x^-(2k+1)
  for (int k = 1; k <= 8; ++k) {
    series += kBernoulli[k - 1] * power;
    power *= inv2;
  }
  return shift + inv + 0.5 * inv2 + series;
}

}  // namespace evuda
