#include "evuda/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evuda/errors.hpp"

namespace evuda {
namespace {

void check_features(const Tensor& src, const Tensor& tgt) {
  if (src.rank() != 2 || tgt.rank() != 2) {
    throw ShapeError("feature batches must be [N,F], got " + shape_str(src.shape()) + " and " +
                     shape_str(tgt.shape()));
  }
  if (src.dim(1) != tgt.dim(1)) {
    throw ShapeError("feature widths differ: " + std::to_string(src.dim(1)) + " vs " +
                     std::to_string(tgt.dim(1)));
  }
  if (src.dim(0) == 0 || tgt.dim(0) == 0) throw ShapeError("empty feature batch");
}

template <class F>
double on_tape(const Tensor& src, const Tensor& tgt, F build) {
  Tape tape;
  return build(tape.constant(src), tape.constant(tgt)).value().item();
}

Var covariance(Var x) {
  const std::size_t n = x.value().dim(0);
  if (n < 2) throw DegenerateBatchError("covariance needs at least 2 samples, got " + std::to_string(n));
  Var centered = ops::sub_row(x, ops::mean_axis0(x));
  return ops::scale(ops::matmul(ops::transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
}

// sqrt whose derivative uses s + 1e-12, so the gradient stays finite when the
// two means coincide while the value itself is exactly zero there.
Var floored_sqrt(Var s) {
  constexpr double floor = 1e-12;
  const double v = s.value().item();
  const std::size_t sid = s.id();
  return s.tape().record("floored_sqrt", Tensor::scalar(std::sqrt(v)), {s}, [sid, v](Tape& t, const Tensor& g) {
    if (!t.requires_grad(sid)) return;
    t.grad_buffer(sid)[0] += g[0] * 0.5 / std::sqrt(v + floor);
  });
}

double squared_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t f = a.dim(1);
  double s = 0.0;
  for (std::size_t c = 0; c < f; ++c) {
    const double d = a[i * f + c] - b[j * f + c];
    s += d * d;
  }
  return s;
}

}  // namespace

std::string_view to_string(AlignMethod m) {
  switch (m) {
    case AlignMethod::noadapt: return "noadapt";
    case AlignMethod::ddc: return "ddc";
    case AlignMethod::coral: return "coral";
    case AlignMethod::homm: return "homm";
    case AlignMethod::mmda: return "mmda";
  }
  return "?";
}

AlignMethod parse_align_method(std::string_view text) {
  for (auto m : {AlignMethod::noadapt, AlignMethod::ddc, AlignMethod::coral, AlignMethod::homm, AlignMethod::mmda}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown alignment method '" + std::string(text) + "'");
}

double mmd_linear(const Tensor& src, const Tensor& tgt) {
  return on_tape(src, tgt, [](Var s, Var t) { return graph::mmd_linear(s, t); });
}

double coral(const Tensor& src, const Tensor& tgt) {
  return on_tape(src, tgt, [](Var s, Var t) { return graph::coral(s, t); });
}

double homm(const Tensor& src, const Tensor& tgt, int order) {
  return on_tape(src, tgt, [order](Var s, Var t) { return graph::homm(s, t, order); });
}

double mmda(const Tensor& src, const Tensor& tgt) {
  return on_tape(src, tgt, [](Var s, Var t) { return graph::mmda(s, t); });
}

std::vector<double> median_bandwidths(const Tensor& src, const Tensor& tgt, std::span<const double> scales) {
  check_features(src, tgt);
  std::vector<double> dists;
  const std::size_t n = src.dim(0), m = tgt.dim(0);
  auto row = [&](std::size_t i) -> std::pair<const Tensor*, std::size_t> {
    return i < n ? std::pair{&src, i} : std::pair{&tgt, i - n};
  };
  for (std::size_t i = 0; i < n + m; ++i)
    for (std::size_t j = i + 1; j < n + m; ++j) {
      const auto [a, ia] = row(i);
      const auto [b, ib] = row(j);
      dists.push_back(std::sqrt(squared_distance(*a, ia, *b, ib)));
    }
  double median = 1.0;
  if (!dists.empty()) {
    const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    median = *mid;
    if (dists.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(dists.begin(), mid));
    }
  }
  if (!(median > 0.0)) median = 1.0;
  std::vector<double> out;
  for (double s : scales) out.push_back(s * median);
  return out;
}

double mmd_rbf(const Tensor& src, const Tensor& tgt, std::span<const double> bandwidths) {
  check_features(src, tgt);
  if (bandwidths.empty()) throw ConfigError("mmd_rbf: bandwidth list is empty");
  for (double b : bandwidths) {
    if (!(b > 0.0)) throw ConfigError("mmd_rbf: bandwidths must be positive");
  }
  const std::size_t n = src.dim(0), m = tgt.dim(0);
  double total = 0.0;
  for (double bw : bandwidths) {
    const double gamma = 1.0 / (2.0 * bw * bw);
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) kxx += std::exp(-gamma * squared_distance(src, i, src, j));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) kyy += std::exp(-gamma * squared_distance(tgt, i, tgt, j));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) kxy += std::exp(-gamma * squared_distance(src, i, tgt, j));
    const double nn = static_cast<double>(n), mm = static_cast<double>(m);
    total += kxx / (nn * nn) + kyy / (mm * mm) - 2.0 * kxy / (nn * mm);
  }
  return std::max(0.0, total);
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ShapeError("wasserstein_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  auto quantile = [](const std::vector<double>& v, double q) {
    const double pos = std::clamp(q * static_cast<double>(v.size()) - 0.5, 0.0, static_cast<double>(v.size() - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
  };
  const std::size_t grid = std::max(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < grid; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(grid);
    s += std::abs(quantile(a, q) - quantile(b, q));
  }
  return s / static_cast<double>(grid);
}

double sliced_wd(const Tensor& src, const Tensor& tgt, std::size_t n_proj, Rng& rng) {
  check_features(src, tgt);
  if (n_proj == 0) throw ConfigError("sliced_wd: number of projections must be positive");
  const std::size_t f = src.dim(1), n = src.dim(0), m = tgt.dim(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dir(f), pa(n), pb(m);
  double total = 0.0;
  for (std::size_t p = 0; p < n_proj; ++p) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& d : dir) {
        d = normal(rng);
        norm += d * d;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& d : dir) d /= norm;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < f; ++c) s += src[i * f + c] * dir[c];
      pa[i] = s;
    }
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < f; ++c) s += tgt[i * f + c] * dir[c];
      pb[i] = s;
    }
    total += wasserstein_1d(pa, pb);
  }
  return total / static_cast<double>(n_proj);
}

namespace graph {

Var mmd_linear(Var src, Var tgt) {
  check_features(src.value(), tgt.value());
  Var diff = ops::sub(ops::mean_axis0(src), ops::mean_axis0(tgt));
  return floored_sqrt(ops::sum(ops::square(diff)));
}

Var coral(Var src, Var tgt) {
  check_features(src.value(), tgt.value());
  const double d = static_cast<double>(src.value().dim(1));
  Var diff = ops::sub(covariance(src), covariance(tgt));
  return ops::scale(ops::sum(ops::square(diff)), 1.0 / (4.0 * d * d));
}

Var homm(Var src, Var tgt, int order) {
  check_features(src.value(), tgt.value());
  const double l = static_cast<double>(src.value().dim(1));
  Var diff = ops::sub(ops::moment_tensor(src, order), ops::moment_tensor(tgt, order));
  return ops::scale(ops::sum(ops::square(diff)), 1.0 / std::pow(l, order));
}

Var mmda(Var src, Var tgt) { return ops::add(mmd_linear(src, tgt), coral(src, tgt)); }

Var domain_loss(Var src, Var tgt, AlignMethod method) {
  switch (method) {
    case AlignMethod::ddc: return mmd_linear(src, tgt);
    case AlignMethod::coral: return coral(src, tgt);
    case AlignMethod::homm: return homm(src, tgt);
    case AlignMethod::mmda: return mmda(src, tgt);
    case AlignMethod::noadapt: break;
  }
  throw ConfigError("domain_loss: method 'noadapt' has no alignment loss");
}

}  // namespace graph
}  // namespace evuda
