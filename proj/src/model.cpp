#include "evuda/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "evuda/errors.hpp"
#include "evuda/evidential.hpp"

namespace evuda {
namespace {

constexpr double kBnMomentum = 0.9;
constexpr double kBnEps = 1e-5;

std::string scale_prefix(std::size_t m) { return "s" + std::to_string(m) + "."; }

// Parameter layout in a fixed order; init, load and forward all follow it.
struct Layout {
  struct Entry {
    std::string name;
    Shape shape;
    bool trainable;
    enum Fill { fan_in, ones, zeros } fill;
    std::size_t fan = 0;
  };
  std::vector<Entry> entries;
};

Layout layout(const ModelConfig& cfg) {
  Layout l;
  auto add = [&](std::string name, Shape shape, bool trainable, Layout::Entry::Fill fill, std::size_t fan = 0) {
    l.entries.push_back({std::move(name), std::move(shape), trainable, fill, fan});
  };
  const std::size_t c = cfg.channels, k = cfg.classes, f = cfg.feature_width();
  if (cfg.variant) {
    const std::size_t convs = conv_levels(*cfg.variant, cfg.levels);
    for (std::size_t i = 0; i < convs; ++i) add("down" + std::to_string(i) + ".weight", {c, c, 3}, true, Layout::Entry::fan_in, c * 3);
  }
  for (std::size_t m = 0; m < cfg.num_scales(); ++m) {
    std::size_t in = c;
    for (std::size_t b = 0; b < cfg.widths.size(); ++b) {
      const std::string p = scale_prefix(m) + "block" + std::to_string(b) + ".";
      const std::size_t w = cfg.widths[b];
      add(p + "conv.weight", {w, in, cfg.kernels[b]}, true, Layout::Entry::fan_in, in * cfg.kernels[b]);
      add(p + "bn.gamma", {w}, true, Layout::Entry::ones);
      add(p + "bn.beta", {w}, true, Layout::Entry::zeros);
      add(p + "bn.running_mean", {w}, false, Layout::Entry::zeros);
      add(p + "bn.running_var", {w}, false, Layout::Entry::ones);
      in = w;
    }
  }
  const std::size_t mixed = f * cfg.num_scales();
  add("final.weight", {mixed, k}, true, Layout::Entry::fan_in, mixed);
  add("final.bias", {k}, true, Layout::Entry::fan_in, mixed);
  add("evidence.weight", {mixed, k}, true, Layout::Entry::fan_in, mixed);
  add("evidence.bias", {k}, true, Layout::Entry::fan_in, mixed);
  if (cfg.variant) {
    for (std::size_t m = 0; m < cfg.num_scales(); ++m) {
      const std::string p = "aux" + std::to_string(m) + ".";
      add(p + "weight", {f, k}, true, Layout::Entry::fan_in, f);
      add(p + "bias", {k}, true, Layout::Entry::fan_in, f);
    }
  }
  return l;
}

Var linear(Var x, Var w, Var b) { return ops::add_row(ops::matmul(x, w), b); }

}  // namespace

std::string_view to_string(PredictionHead h) { return h == PredictionHead::evidential ? "evidential" : "softmax"; }

void ModelConfig::validate() const {
  if (channels == 0) throw ConfigError("model: channels must be positive");
  if (classes < 2) throw ConfigError("model: need at least 2 classes");
  if (widths.empty() || widths.size() != kernels.size()) {
    throw ConfigError("model: conv widths and kernel sizes must be non-empty lists of equal length");
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0 || kernels[i] == 0) throw ConfigError("model: widths and kernel sizes must be positive");
  }
  if (variant) {
    if (levels == 0) throw ConfigError("model: multi-scale mixing needs at least one down-sampling level");
    if (levels >= 63 || length < (std::size_t{1} << levels)) {
      throw ConfigError("model: input length " + std::to_string(length) + " is too short for " +
                        std::to_string(levels) + " down-sampling levels");
    }
  } else if (length == 0) {
    throw ConfigError("model: input length must be positive");
  }
}

Parameter& ModelParams::get(std::string_view name) {
  for (auto& p : params)
    if (p.name == name) return p;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

const Parameter& ModelParams::get(std::string_view name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += p.value.size();
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(params.begin(), params.end(), [](const Parameter& p) { return p.value.all_finite(); });
}

std::vector<Var> bind_params(Tape& tape, const ModelParams& params) {
  std::vector<Var> out;
  out.reserve(params.params.size());
  for (const auto& p : params.params) out.push_back(p.trainable ? tape.input(p.value) : tape.constant(p.value));
  return out;
}

ModelParams init(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams mp;
  mp.config = cfg;
  Rng rng(cfg.seed);
  for (const auto& e : layout(cfg).entries) {
    Tensor t(e.shape);
    switch (e.fill) {
      case Layout::Entry::ones: t = Tensor(e.shape, 1.0); break;
      case Layout::Entry::zeros: break;
      case Layout::Entry::fan_in: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : t.data()) v = u(rng);
        break;
      }
    }
    mp.params.push_back({e.name, std::move(t), e.trainable});
  }
  return mp;
}

ForwardOutput forward(ModelParams& params, std::span<const Var> bound, Var x, Mode mode, Rng* rng) {
  const ModelConfig& cfg = params.config;
  if (bound.size() != params.params.size()) throw ContractError("forward: parameter binding does not match model");
  if (x.value().rank() != 3 || x.shape()[1] != cfg.channels || x.shape()[2] != cfg.length) {
    throw ShapeError("model expects input [N," + std::to_string(cfg.channels) + "," + std::to_string(cfg.length) +
                     "], got " + shape_str(x.shape()));
  }
  const bool training = mode == Mode::train;
  std::size_t next = 0;
  auto take = [&]() -> std::pair<Var, Parameter*> {
    const std::size_t i = next++;
    return {bound[i], &params.params[i]};
  };

  std::vector<Var> scales{x};
  if (cfg.variant) {
    std::vector<Var> kernels;
    for (std::size_t i = 0; i < conv_levels(*cfg.variant, cfg.levels); ++i) kernels.push_back(take().first);
    scales = graph::build_scales(x, cfg.levels, *cfg.variant, training, rng, kernels);
  }

  ForwardOutput out;
  for (Var h : scales) {
    for (std::size_t b = 0; b < cfg.widths.size(); ++b) {
      const std::size_t len = h.shape()[2];
      Var w = take().first;
      h = ops::conv1d(h, w, 1, cfg.kernels[b] / 2);
      if (h.shape()[2] != len) h = ops::crop_time(h, len);
      Var gamma = take().first;
      Var beta = take().first;
      Parameter* rm = take().second;
      Parameter* rv = take().second;
      h = ops::batch_norm(h, gamma, beta, rm->value, rv->value, training, kBnMomentum, kBnEps);
      h = ops::relu(h);
      if (h.shape()[2] >= 2) h = ops::pool1d(h, PoolKind::max, 2, 2);
    }
    out.scale_features.push_back(ops::global_avg_pool(h));
  }
  out.mixed = graph::mix_features(out.scale_features);
  Var fw = take().first, fb = take().first;
  out.final_logits = linear(out.mixed, fw, fb);
  Var ew = take().first, eb = take().first;
  out.evidence = ops::softplus(linear(out.mixed, ew, eb));
  if (cfg.variant) {
    for (Var f : out.scale_features) {
      Var aw = take().first, ab = take().first;
      out.aux_logits.push_back(linear(f, aw, ab));
    }
  }
  return out;
}

Inference infer(const ModelParams& params, const Tensor& x, std::size_t batch) {
  const ModelConfig& cfg = params.config;
  if (x.rank() != 3) throw ShapeError("infer expects [N,C,T], got " + shape_str(x.shape()));
  if (batch == 0) batch = 1;
  const std::size_t n = x.dim(0), k = cfg.classes, row = x.size() / std::max<std::size_t>(n, 1);
  const std::size_t fw = cfg.feature_width() * cfg.num_scales();
  Inference res{Tensor(Shape{n, k}), Tensor(Shape{n, k}), Tensor(Shape{n, k}),
                Tensor(Shape{n}),    Tensor(Shape{n, fw}), std::vector<int>(n)};
  // eval mode never writes running statistics; a copy keeps `params` const
  ModelParams local = params;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    Tensor chunk(Shape{len, x.dim(1), x.dim(2)},
                 std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(start * row),
                                     x.values().begin() + static_cast<std::ptrdiff_t>((start + len) * row)));
    Tape tape;
    std::vector<Var> bound;
    for (const auto& p : local.params) bound.push_back(tape.constant(p.value));
    const auto out = forward(local, bound, tape.constant(std::move(chunk)), Mode::eval);
    const DirichletBatch dir = evidence_to_alpha(out.evidence.value());
    const Tensor dirichlet = predict_mean(dir);
    const Tensor softmax = ops::softmax(out.final_logits).value();
    const Tensor& probs = cfg.head == PredictionHead::evidential ? dirichlet : softmax;
    for (std::size_t i = 0; i < len; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < k; ++c) {
        res.probs.at(start + i, c) = probs.at(i, c);
        res.dirichlet_probs.at(start + i, c) = dirichlet.at(i, c);
        res.softmax_probs.at(start + i, c) = softmax.at(i, c);
        if (probs.at(i, c) > probs.at(i, best)) best = c;
      }
      res.predicted[start + i] = static_cast<int>(best);
      res.uncertainty[start + i] = dir.uncertainty_mass[i];
      for (std::size_t c = 0; c < fw; ++c) res.features.at(start + i, c) = out.mixed.value().at(i, c);
    }
  }
  return res;
}

std::vector<std::uint8_t> serialize_model(const ModelParams& params) {
  const ModelConfig& c = params.config;
  io::Writer w;
  w.bytes("EVTM", 4);
  w.put<std::uint32_t>(kModelFormatVersion);
  w.put<std::uint64_t>(c.channels);
  w.put<std::uint64_t>(c.length);
  w.put<std::uint64_t>(c.classes);
  w.put<std::uint8_t>(c.variant ? 1 : 0);
  w.put<std::uint8_t>(c.variant ? static_cast<std::uint8_t>(*c.variant) : 0);
  w.put<std::uint64_t>(c.levels);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.widths.size()));
  for (std::size_t i = 0; i < c.widths.size(); ++i) {
    w.put<std::uint64_t>(c.widths[i]);
    w.put<std::uint64_t>(c.kernels[i]);
  }
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.head));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.params.size()));
  for (const auto& p : params.params) {
    w.str(p.name);
    w.put<std::uint8_t>(p.trainable ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.put<std::uint64_t>(d);
    for (double v : p.value.data()) w.put<double>(v);
  }
  w.seal();
  return std::move(w.buffer());
}

ModelParams deserialize_model(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "model file");
  r.expect_magic("EVTM");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFormatVersion) {
    r.fail("unsupported format version " + std::to_string(version) + " (expected " +
           std::to_string(kModelFormatVersion) + ")");
  }
  r.verify_checksum();
  ModelConfig c;
  c.channels = r.get<std::uint64_t>();
  c.length = r.get<std::uint64_t>();
  c.classes = r.get<std::uint64_t>();
  const auto has_variant = r.get<std::uint8_t>();
  const auto variant = r.get<std::uint8_t>();
  if (has_variant > 1 || variant > static_cast<std::uint8_t>(ScaleVariant::R)) r.fail("invalid variant tag");
  c.variant = has_variant ? std::optional(static_cast<ScaleVariant>(variant)) : std::nullopt;
  c.levels = r.get<std::uint64_t>();
  const auto blocks = r.get<std::uint32_t>();
  if (blocks > 1024) r.fail("implausible block count");
  c.widths.resize(blocks);
  c.kernels.resize(blocks);
  for (std::size_t i = 0; i < blocks; ++i) {
    c.widths[i] = r.get<std::uint64_t>();
    c.kernels[i] = r.get<std::uint64_t>();
  }
  c.seed = r.get<std::uint64_t>();
  const auto head = r.get<std::uint8_t>();
  if (head > 1) r.fail("invalid prediction head tag");
  c.head = static_cast<PredictionHead>(head);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid stored config: ") + e.what());
  }
  const auto expected = layout(c);
  const auto count = r.get<std::uint32_t>();
  if (count != expected.entries.size()) r.fail("parameter count does not match the stored config");
  ModelParams mp;
  mp.config = c;
  for (const auto& e : expected.entries) {
    Parameter p;
    p.name = r.str();
    p.trainable = r.get<std::uint8_t>() != 0;
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.get<std::uint64_t>());
    if (p.name != e.name || shape != e.shape || p.trainable != e.trainable) {
      r.fail("parameter '" + p.name + "' does not match the stored config");
    }
    std::vector<double> values(shape_size(shape));
    r.bytes(values.data(), values.size() * sizeof(double));
    p.value = Tensor(shape, std::move(values));
    mp.params.push_back(std::move(p));
  }
  r.expect_end();
  return mp;
}

void save_model(const ModelParams& params, const std::string& path) { io::write_file(path, serialize_model(params)); }

ModelParams load_model(const std::string& path) { return deserialize_model(io::read_file(path)); }

}  // namespace evuda
