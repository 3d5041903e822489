#include "evuda/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "evuda/errors.hpp"
#include "evuda/special.hpp"

namespace evuda {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(a.shape()));
  }
}

std::size_t conv_out_len(std::size_t len, std::size_t k, std::size_t stride, std::size_t pad) {
  return (len + 2 * pad - k) / stride + 1;
}

// Valid output range [lo, hi) for kernel tap j so that t*stride + j - pad lies in [0, len).
void tap_range(std::size_t j, std::size_t len, std::size_t out_len, std::size_t stride,
               std::size_t pad, std::size_t& lo, std::size_t& hi) {
  lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
  // largest t with t*stride + j - pad <= len - 1
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(len) - 1 + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(j);
  hi = top < 0 ? 0 : std::min(out_len, static_cast<std::size_t>(top) / stride + 1);
  if (hi < lo) hi = lo;
}

// Pooling forward that also reports which input index fed each output (max/random).
Tensor pool_forward(const Tensor& x, PoolKind kind, std::size_t window, std::size_t stride, Rng* rng,
                    std::vector<std::size_t>* argidx) {
  require_rank("pool1d", x, 3);
  if (window == 0 || stride == 0) throw ConfigError("pool1d: window and stride must be positive");
  if (kind == PoolKind::random && rng == nullptr) {
    throw ConfigError("pool1d: random pooling requires a seeded generator");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), len = x.dim(2);
  if (len < window) {
    throw ShapeError("pool1d: length " + std::to_string(len) + " shorter than window " +
                     std::to_string(window));
  }
  const std::size_t out_len = (len - window) / stride + 1;
  Tensor out(Shape{n, c, out_len});
  if (argidx) argidx->assign(out.size(), 0);
  std::uniform_int_distribution<std::size_t> pick(0, window - 1);
  const auto in = x.data();
  auto o = out.data();
  for (std::size_t row = 0; row < n * c; ++row) {
    const double* src = in.data() + row * len;
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::size_t base = t * stride;
      const std::size_t oi = row * out_len + t;
      switch (kind) {
        case PoolKind::avg: {
          double s = 0.0;
          for (std::size_t w = 0; w < window; ++w) s += src[base + w];
          o[oi] = s / static_cast<double>(window);
          break;
        }
        case PoolKind::max: {
          std::size_t best = base;
          for (std::size_t w = 1; w < window; ++w) {
            if (src[base + w] > src[best]) best = base + w;
          }
          o[oi] = src[best];
          if (argidx) (*argidx)[oi] = row * len + best;
          break;
        }
        case PoolKind::random: {
          const std::size_t sel = base + pick(*rng);
          o[oi] = src[sel];
          if (argidx) (*argidx)[oi] = row * len + sel;
          break;
        }
      }
    }
  }
  return out;
}

template <class F, class DF>
Var unary(const char* op, Var a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t aid = a.id();
  return a.tape().record(op, std::move(out), {a}, [aid, df](Tape& t, const Tensor& g) {
    if (!t.requires_grad(aid)) return;
    const Tensor& x = t.value(aid);
    Tensor& ga = t.grad_buffer(aid);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
  });
}

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void add_into(Tape& t, std::size_t id, const Tensor& g, double factor = 1.0) {
  if (!t.requires_grad(id)) return;
  Tensor& buf = t.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += factor * g[i];
}

struct Matrix {
  std::size_t rows, cols;
};

Matrix as_matrix(const char* op, const Tensor& a) {
  require_rank(op, a, 2);
  return {a.dim(0), a.dim(1)};
}

}  // namespace

Tensor conv1d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank("conv1d input", input, 3);
  require_rank("conv1d kernel", kernel, 3);
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  const std::size_t n = input.dim(0), cin = input.dim(1), len = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv1d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                     shape_str(input.shape()));
  }
  if (len + 2 * padding < k) {
    throw ShapeError("conv1d: padded length " + std::to_string(len + 2 * padding) +
                     " shorter than kernel " + std::to_string(k));
  }
  const std::size_t out_len = conv_out_len(len, k, stride, padding);
  Tensor out(Shape{n, cout, out_len});
  const double* x = input.data().data();
  const double* w = kernel.data().data();
  double* y = out.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* yrow = y + (s * cout + o) * out_len;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xrow = x + (s * cin + c) * len;
        const double* wrow = w + (o * cin + c) * k;
        for (std::size_t j = 0; j < k; ++j) {
          std::size_t lo, hi;
          tap_range(j, len, out_len, stride, padding, lo, hi);
          const double wj = wrow[j];
          if (stride == 1) {
            for (std::size_t t = lo; t < hi; ++t) yrow[t] += wj * xrow[t + j - padding];
          } else {
            for (std::size_t t = lo; t < hi; ++t) yrow[t] += wj * xrow[t * stride + j - padding];
          }
        }
      }
    }
  }
  return out;
}

Tensor pool1d(const Tensor& input, PoolKind kind, std::size_t window, std::size_t stride, Rng* rng) {
  return pool_forward(input, kind, window, stride, rng, nullptr);
}

namespace ops {

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    add_into(t, ai, g);
    add_into(t, bi, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    add_into(t, ai, g);
    add_into(t, bi, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("div", std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt(Var a) {
  for (double v : a.value().data()) {
    if (v < 0.0) throw DomainError("sqrt of negative value");
  }
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double x) { return 0.5 / std::sqrt(x); });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value");
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) { return unary("softplus", a, softplus_value, sigmoid); }

Var lgamma(Var a) {
  return unary("lgamma", a, [](double x) { return evuda::lgamma(x); },
               [](double x) { return evuda::digamma(x); });
}

Var digamma(Var a) {
  return unary("digamma", a, [](double x) { return evuda::digamma(x); },
               [](double x) { return evuda::trigamma(x); });
}

Var add_row(Var a, Var row) {
  const auto [n, f] = as_matrix("add_row", a.value());
  if (row.value().rank() != 1 || row.value().dim(0) != f) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] += row.value()[j];
  const auto ai = a.id(), ri = row.id();
  return a.tape().record("add_row", std::move(out), {a, row}, [ai, ri, n, f](Tape& t, const Tensor& g) {
    add_into(t, ai, g);
    if (t.requires_grad(ri)) {
      Tensor& gr = t.grad_buffer(ri);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gr[j] += g[i * f + j];
    }
  });
}

Var sub_row(Var a, Var row) {
  return add_row(a, scale(row, -1.0));
}

Var add_col(Var a, Var col) {
  const auto [n, f] = as_matrix("add_col", a.value());
  if (col.value().rank() != 1 || col.value().dim(0) != n) {
    throw ShapeError("add_col: column " + shape_str(col.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] += col.value()[i];
  const auto ai = a.id(), ci = col.id();
  return a.tape().record("add_col", std::move(out), {a, col}, [ai, ci, n, f](Tape& t, const Tensor& g) {
    add_into(t, ai, g);
    if (t.requires_grad(ci)) {
      Tensor& gc = t.grad_buffer(ci);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gc[i] += g[i * f + j];
    }
  });
}

Var sub_col(Var a, Var col) { return add_col(a, scale(col, -1.0)); }

Var div_col(Var a, Var col) {
  const auto [n, f] = as_matrix("div_col", a.value());
  if (col.value().rank() != 1 || col.value().dim(0) != n) {
    throw ShapeError("div_col: column " + shape_str(col.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] /= col.value()[i];
  const auto ai = a.id(), ci = col.id();
  return a.tape().record("div_col", std::move(out), {a, col}, [ai, ci, n, f](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ai);
    const Tensor& cv = t.value(ci);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) ga[i * f + j] += g[i * f + j] / cv[i];
    }
    if (t.requires_grad(ci)) {
      Tensor& gc = t.grad_buffer(ci);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gc[i] -= g[i * f + j] * av[i * f + j] / (cv[i] * cv[i]);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ai = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {a}, [ai](Tape& t, const Tensor& g) {
    if (!t.requires_grad(ai)) return;
    Tensor& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_axis1(Var a) {
  const auto [n, k] = as_matrix("sum_axis1", a.value());
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i] += a.value()[i * k + j];
  const auto ai = a.id();
  return a.tape().record("sum_axis1", std::move(out), {a}, [ai, n, k](Tape& t, const Tensor& g) {
    if (!t.requires_grad(ai)) return;
    Tensor& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g[i];
  });
}

Var mean_axis0(Var a) {
  const auto [n, f] = as_matrix("mean_axis0", a.value());
  if (n == 0) throw ShapeError("mean_axis0 of empty batch");
  Tensor out(Shape{f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[j] += a.value()[i * f + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < f; ++j) out[j] *= inv;
  const auto ai = a.id();
  return a.tape().record("mean_axis0", std::move(out), {a}, [ai, n, f, inv](Tape& t, const Tensor& g) {
    if (!t.requires_grad(ai)) return;
    Tensor& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) ga[i * f + j] += g[j] * inv;
  });
}

Var matmul(Var a, Var b) {
  const auto [n, f] = as_matrix("matmul", a.value());
  const auto [f2, k] = as_matrix("matmul", b.value());
  if (f != f2) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{n, k});
  const double* av = a.value().data().data();
  const double* bv = b.value().data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data().data() + i * k;
    for (std::size_t p = 0; p < f; ++p) {
      const double x = av[i * f + p];
      const double* brow = bv + p * k;
      for (std::size_t j = 0; j < k; ++j) orow[j] += x * brow[j];
    }
  }
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ai, bi, n, f, k](Tape& t, const Tensor& g) {
    const double* av = t.value(ai).data().data();
    const double* bv = t.value(bi).data().data();
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad_buffer(ai);  // g [n,k] x b^T [k,f]
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < f; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += g[i * k + j] * bv[p * k + j];
          ga[i * f + p] += s;
        }
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);  // a^T [f,n] x g [n,k]
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < f; ++p) {
          const double x = av[i * f + p];
          for (std::size_t j = 0; j < k; ++j) gb[p * k + j] += x * g[i * k + j];
        }
    }
  });
}

Var transpose(Var a) {
  const auto [n, f] = as_matrix("transpose", a.value());
  Tensor out(Shape{f, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[j * n + i] = a.value()[i * f + j];
  const auto ai = a.id();
  return a.tape().record("transpose", std::move(out), {a}, [ai, n, f](Tape& t, const Tensor& g) {
    if (!t.requires_grad(ai)) return;
    Tensor& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) ga[i * f + j] += g[j * n + i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = as_matrix("concat_cols", parts[0].value()).rows;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const auto m = as_matrix("concat_cols", p.value());
    if (m.rows != n) {
      throw ShapeError("concat_cols: inconsistent batch sizes " + std::to_string(n) + " and " +
                       std::to_string(m.rows));
    }
    widths.push_back(m.cols);
    total += m.cols;
  }
  Tensor out(Shape{n, total});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out[i * total + offset + j] = v[i * widths[p] + j];
    offset += widths[p];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape().record(
      "concat_cols", std::move(out), std::move(parents),
      [ids, widths, n, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (t.requires_grad(ids[p])) {
            Tensor& gp = t.grad_buffer(ids[p]);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * total + off + j];
          }
          off += widths[p];
        }
      });
}

Var softmax(Var logits) {
  const auto [n, k] = as_matrix("softmax", logits.value());
  Tensor out(Shape{n, k});
  const Tensor& x = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, x[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (out[i * k + j] = std::exp(x[i * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  const auto li = logits.id();
  Tensor probs = out;
  return logits.tape().record("softmax", std::move(out), {logits},
                              [li, probs, n, k](Tape& t, const Tensor& g) {
                                if (!t.requires_grad(li)) return;
                                Tensor& gl = t.grad_buffer(li);
                                for (std::size_t i = 0; i < n; ++i) {
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * probs[i * k + j];
                                  for (std::size_t j = 0; j < k; ++j)
                                    gl[i * k + j] += probs[i * k + j] * (g[i * k + j] - dot);
                                }
                              });
}

Var log_softmax(Var logits) {
  const auto [n, k] = as_matrix("log_softmax", logits.value());
  Tensor out(Shape{n, k});
  Tensor probs(Shape{n, k});
  const Tensor& x = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, x[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[i * k + j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = x[i * k + j] - lz;
      probs[i * k + j] = std::exp(out[i * k + j]);
    }
  }
  const auto li = logits.id();
  return logits.tape().record("log_softmax", std::move(out), {logits},
                              [li, probs, n, k](Tape& t, const Tensor& g) {
                                if (!t.requires_grad(li)) return;
                                Tensor& gl = t.grad_buffer(li);
                                for (std::size_t i = 0; i < n; ++i) {
                                  double gs = 0.0;
                                  for (std::size_t j = 0; j < k; ++j) gs += g[i * k + j];
                                  for (std::size_t j = 0; j < k; ++j)
                                    gl[i * k + j] += g[i * k + j] - probs[i * k + j] * gs;
                                }
                              });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const auto [n, k] = as_matrix("softmax_cross_entropy", logits.value());
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  Tensor onehot(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DomainError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    onehot[i * k + static_cast<std::size_t>(labels[i])] = -1.0;
  }
  Tape& tape = logits.tape();
  return sum_axis1(mul(log_softmax(logits), tape.constant(std::move(onehot))));
}

Var conv1d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  Tensor out = evuda::conv1d(input.value(), kernel.value(), stride, padding);
  const std::size_t n = input.value().dim(0), cin = input.value().dim(1), len = input.value().dim(2);
  const std::size_t cout = kernel.value().dim(0), k = kernel.value().dim(2);
  const std::size_t out_len = out.dim(2);
  const auto xi = input.id(), wi = kernel.id();
  return input.tape().record(
      "conv1d", std::move(out), {input, kernel},
      [=](Tape& t, const Tensor& g) {
        const double* x = t.value(xi).data().data();
        const double* w = t.value(wi).data().data();
        const double* gy = g.data().data();
        const bool need_x = t.requires_grad(xi), need_w = t.requires_grad(wi);
        double* gx = need_x ? t.grad_buffer(xi).data().data() : nullptr;
        double* gw = need_w ? t.grad_buffer(wi).data().data() : nullptr;
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t o = 0; o < cout; ++o) {
            const double* grow = gy + (s * cout + o) * out_len;
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xrow = x + (s * cin + c) * len;
              const std::size_t wbase = (o * cin + c) * k;
              for (std::size_t j = 0; j < k; ++j) {
                std::size_t lo, hi;
                tap_range(j, len, out_len, stride, padding, lo, hi);
                if (need_w) {
                  double acc = 0.0;
                  for (std::size_t tt = lo; tt < hi; ++tt) acc += grow[tt] * xrow[tt * stride + j - padding];
                  gw[wbase + j] += acc;
                }
                if (need_x) {
                  const double wj = w[wbase + j];
                  double* gxrow = gx + (s * cin + c) * len;
                  for (std::size_t tt = lo; tt < hi; ++tt) gxrow[tt * stride + j - padding] += wj * grow[tt];
                }
              }
            }
          }
        }
      });
}

Var pool1d(Var input, PoolKind kind, std::size_t window, std::size_t stride, Rng* rng) {
  std::vector<std::size_t> argidx;
  Tensor out = pool_forward(input.value(), kind, window, stride, rng, &argidx);
  const auto xi = input.id();
  const std::size_t len = input.value().dim(2);
  const std::size_t out_len = out.dim(2);
  const char* name = kind == PoolKind::avg ? "avg_pool1d" : kind == PoolKind::max ? "max_pool1d" : "random_pool1d";
  if (kind == PoolKind::avg) {
    return input.tape().record(name, std::move(out), {input},
                               [xi, len, out_len, window, stride](Tape& t, const Tensor& g) {
                                 if (!t.requires_grad(xi)) return;
                                 Tensor& gx = t.grad_buffer(xi);
                                 const std::size_t rows = g.size() / out_len;
                                 const double inv = 1.0 / static_cast<double>(window);
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t tt = 0; tt < out_len; ++tt)
                                     for (std::size_t w = 0; w < window; ++w)
                                       gx[r * len + tt * stride + w] += g[r * out_len + tt] * inv;
                               });
  }
  return input.tape().record(name, std::move(out), {input},
                             [xi, argidx = std::move(argidx)](Tape& t, const Tensor& g) {
                               if (!t.requires_grad(xi)) return;
                               Tensor& gx = t.grad_buffer(xi);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[argidx[i]] += g[i];
                             });
}

Var global_avg_pool(Var input) {
  require_rank("global_avg_pool", input.value(), 3);
  const std::size_t n = input.value().dim(0), c = input.value().dim(1), len = input.value().dim(2);
  if (len == 0) throw ShapeError("global_avg_pool: empty time axis");
  Tensor out(Shape{n, c});
  for (std::size_t r = 0; r < n * c; ++r) {
    double s = 0.0;
    for (std::size_t tt = 0; tt < len; ++tt) s += input.value()[r * len + tt];
    out[r] = s / static_cast<double>(len);
  }
  const auto xi = input.id();
  return input.tape().record("global_avg_pool", std::move(out), {input},
                             [xi, n, c, len](Tape& t, const Tensor& g) {
                               if (!t.requires_grad(xi)) return;
                               Tensor& gx = t.grad_buffer(xi);
                               const double inv = 1.0 / static_cast<double>(len);
                               for (std::size_t r = 0; r < n * c; ++r)
                                 for (std::size_t tt = 0; tt < len; ++tt) gx[r * len + tt] += g[r] * inv;
                             });
}

Var crop_time(Var input, std::size_t length) {
  require_rank("crop_time", input.value(), 3);
  const std::size_t n = input.value().dim(0), c = input.value().dim(1), len = input.value().dim(2);
  if (length > len) throw ShapeError("crop_time: cannot crop to a longer length");
  if (length == len) return input;
  Tensor out(Shape{n, c, length});
  for (std::size_t r = 0; r < n * c; ++r)
    for (std::size_t tt = 0; tt < length; ++tt) out[r * length + tt] = input.value()[r * len + tt];
  const auto xi = input.id();
  return input.tape().record("crop_time", std::move(out), {input},
                             [xi, n, c, len, length](Tape& t, const Tensor& g) {
                               if (!t.requires_grad(xi)) return;
                               Tensor& gx = t.grad_buffer(xi);
                               for (std::size_t r = 0; r < n * c; ++r)
                                 for (std::size_t tt = 0; tt < length; ++tt) gx[r * len + tt] += g[r * length + tt];
                             });
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training,
               double momentum, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 3) {
    throw ShapeError("batch_norm: expected [N,C] or [N,C,T], got " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), len = xv.rank() == 3 ? xv.dim(2) : 1;
  if (gamma.value().size() != c || beta.value().size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batch_norm: parameter sizes do not match " + std::to_string(c) + " channels");
  }
  const std::size_t m = n * len;
  Tensor mean_c(Shape{c}), inv_std(Shape{c});
  if (training) {
    if (m < 2) throw DegenerateBatchError("batch_norm: training needs at least 2 values per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t tt = 0; tt < len; ++tt) s += xv[(i * c + ch) * len + tt];
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t tt = 0; tt < len; ++tt) {
          const double d = xv[(i * c + ch) * len + tt] - mu;
          v += d * d;
        }
      const double biased = v / static_cast<double>(m);
      mean_c[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(biased + eps);
      running_mean[ch] = momentum * running_mean[ch] + (1.0 - momentum) * mu;
      running_var[ch] = momentum * running_var[ch] + (1.0 - momentum) * v / static_cast<double>(m - 1);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    }
  }
  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t tt = 0; tt < len; ++tt) {
        const std::size_t idx = (i * c + ch) * len + tt;
        xhat[idx] = (xv[idx] - mean_c[ch]) * inv_std[ch];
        out[idx] = gamma.value()[ch] * xhat[idx] + beta.value()[ch];
      }
  const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      training ? "batch_norm_train" : "batch_norm_eval", std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& gam = t.value(gi);
        Tensor sum_g(Shape{c}), sum_gx(Shape{c});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t tt = 0; tt < len; ++tt) {
              const std::size_t idx = (i * c + ch) * len + tt;
              sum_g[ch] += g[idx];
              sum_gx[ch] += g[idx] * xhat[idx];
            }
        if (t.requires_grad(gi)) {
          Tensor& gg = t.grad_buffer(gi);
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (t.requires_grad(bi)) {
          Tensor& gb = t.grad_buffer(bi);
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (!t.requires_grad(xi)) return;
        Tensor& gx = t.grad_buffer(xi);
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t tt = 0; tt < len; ++tt) {
              const std::size_t idx = (i * c + ch) * len + tt;
              if (training) {
                gx[idx] += gam[ch] * inv_std[ch] *
                           (g[idx] - inv_m * sum_g[ch] - xhat[idx] * inv_m * sum_gx[ch]);
              } else {
                gx[idx] += gam[ch] * inv_std[ch] * g[idx];
              }
            }
      });
}

Var moment_tensor(Var x, int order) {
  const auto [n, l] = as_matrix("moment_tensor", x.value());
  if (order < 1) throw ConfigError("moment_tensor: order must be positive");
  if (order >= 4 && l > 16) {
    throw ResourceError("moment_tensor: order " + std::to_string(order) + " with " + std::to_string(l) +
                        " features exceeds the tensor size guard");
  }
  if (n == 0) throw ShapeError("moment_tensor: empty batch");
  const auto p = static_cast<std::size_t>(order);
  std::size_t entries = 1;
  for (std::size_t j = 0; j < p; ++j) entries *= l;
  const Tensor& xv = x.value();
  Tensor out(Shape{entries});
  std::vector<std::size_t> digits(p);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t e = 0; e < entries; ++e) {
    std::size_t rem = e;
    for (std::size_t j = p; j-- > 0;) {
      digits[j] = rem % l;
      rem /= l;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double prod = 1.0;
      for (std::size_t j = 0; j < p; ++j) prod *= xv[i * l + digits[j]];
      acc += prod;
    }
    out[e] = acc * inv_n;
  }
  const auto xi = x.id();
  return x.tape().record("moment_tensor", std::move(out), {x}, [xi, n, l, p, entries, inv_n](Tape& t, const Tensor& g) {
    if (!t.requires_grad(xi)) return;
    const Tensor& xv = t.value(xi);
    Tensor& gx = t.grad_buffer(xi);
    std::vector<std::size_t> digits(p);
    std::vector<double> prefix(p + 1), suffix(p + 1);
    for (std::size_t e = 0; e < entries; ++e) {
      const double ge = g[e] * inv_n;
      if (ge == 0.0) continue;
      std::size_t rem = e;
      for (std::size_t j = p; j-- > 0;) {
        digits[j] = rem % l;
        rem /= l;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = xv.data().data() + i * l;
        prefix[0] = 1.0;
        for (std::size_t j = 0; j < p; ++j) prefix[j + 1] = prefix[j] * row[digits[j]];
        suffix[p] = 1.0;
        for (std::size_t j = p; j-- > 0;) suffix[j] = suffix[j + 1] * row[digits[j]];
        for (std::size_t j = 0; j < p; ++j) gx[i * l + digits[j]] += ge * prefix[j] * suffix[j + 1];
      }
    }
  });
}

}  // namespace ops
}  // namespace evuda
