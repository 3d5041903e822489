#include "evuda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evuda/errors.hpp"

namespace evuda {
namespace {

void check_classes(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
  if (pred.size() != truth.size()) throw ShapeError("prediction and truth lengths differ");
  if (classes == 0) throw DomainError("class count must be positive");
  for (auto s : {pred, truth}) {
    for (int c : s) {
      if (c < 0 || static_cast<std::size_t>(c) >= classes) {
        throw DomainError("class " + std::to_string(c) + " outside [0," + std::to_string(classes) + ")");
      }
    }
  }
}

// Right-closed equal-width bin index of v in (lo, 1]; values at or below lo
// land in the first bin.
std::size_t bin_of(double v, double lo, std::size_t bins) {
  double scaled = (v - lo) / (1.0 - lo) * static_cast<double>(bins);
  // snap values sitting on an edge up to rounding so 0.1 * 30 counts as 3
  if (std::abs(scaled - std::round(scaled)) < 1e-9) scaled = std::round(scaled);
  const double pos = std::ceil(scaled);
  if (pos <= 1.0) return 0;
  return std::min(bins - 1, static_cast<std::size_t>(pos) - 1);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                                         std::size_t classes) {
  check_classes(pred, truth, classes);
  std::vector<std::vector<std::uint64_t>> m(classes, std::vector<std::uint64_t>(classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  return m;
}

double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
  const auto m = confusion_matrix(pred, truth, classes);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double fp = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += static_cast<double>(m[o][c]);
      fn += static_cast<double>(m[c][o]);
    }
    const double tp = static_cast<double>(m[c][c]);
    const double denom = 2.0 * tp + fp + fn;
    total += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return total / static_cast<double>(classes);
}

CalibrationReport ece(const Tensor& probs, std::span<const int> truth, std::size_t bins) {
  if (probs.rank() != 2) throw ShapeError("ece expects [N,K] probabilities, got " + shape_str(probs.shape()));
  if (bins == 0) throw ConfigError("ece needs at least one bin");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (truth.size() != n) throw ShapeError("ece: label count does not match probability rows");
  if (k < 2) throw ShapeError("ece needs at least 2 classes");
  std::vector<int> pred(n);
  std::vector<double> conf(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::size_t best = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = probs.at(i, c);
      if (!(p >= 0.0 && p <= 1.0 + 1e-6)) throw DomainError("ece: probability outside [0,1] in row " + std::to_string(i));
      sum += p;
      if (p > probs.at(i, best)) best = c;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DomainError("ece: row " + std::to_string(i) + " does not sum to 1");
    pred[i] = static_cast<int>(best);
    conf[i] = std::min(1.0, probs.at(i, best));
  }
  check_classes(pred, truth, k);

  const double lo = 1.0 / static_cast<double>(k);
  CalibrationReport r;
  std::vector<double> conf_sum(bins, 0.0), correct(bins, 0.0);
  r.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    r.bins[b].lower = lo + (1.0 - lo) * static_cast<double>(b) / static_cast<double>(bins);
    r.bins[b].upper = lo + (1.0 - lo) * static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = bin_of(conf[i], lo, bins);
    ++r.bins[b].count;
    conf_sum[b] += conf[i];
    correct[b] += pred[i] == truth[i] ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = r.bins[b];
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.accuracy = correct[b] / cnt;
    r.ece += cnt / static_cast<double>(n) * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return r;
}

UncertaintyStats uncertainty_stats(std::span<const double> u, std::string domain, std::size_t bins) {
  if (bins == 0) throw ConfigError("uncertainty histogram needs at least one bin");
  if (u.empty()) throw ShapeError("uncertainty_stats: no samples");
  UncertaintyStats s{std::move(domain), 0.0, std::vector<double>(bins, 0.0)};
  const double w = 1.0 / static_cast<double>(u.size());
  for (double v : u) {
    if (!(v > 0.0 && v <= 1.0)) throw DomainError("uncertainty " + std::to_string(v) + " outside (0,1]");
    s.mean += v;
    s.histogram[bin_of(v, 0.0, bins)] += w;
  }
  s.mean /= static_cast<double>(u.size());
  return s;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: lengths differ");
  if (xs.size() < 3) throw ShapeError("spearman needs at least 3 pairs");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double mean = 0.5 * static_cast<double>(xs.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mean, b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace evuda
