#include "evuda/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "evuda/errors.hpp"
#include "evuda/metrics.hpp"
#include "json.hpp"

namespace evuda {
namespace {

using nlohmann::ordered_json;

void require_finite(double v, const char* component, const std::string& where) {
  if (!std::isfinite(v)) {
    throw NumericalAbort(std::string("non-finite ") + component + " loss (" + std::to_string(v) + ")" + where);
  }
}

void require_finite(const Var& v, const char* component, const std::string& where) {
  if (!v.value().all_finite()) throw NumericalAbort(std::string("non-finite ") + component + where);
}

Tensor gather(const Tensor& values, std::span<const std::size_t> rows) {
  const std::size_t row = values.dim(1) * values.dim(2);
  std::vector<double> out;
  out.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    const auto begin = values.values().begin() + static_cast<std::ptrdiff_t>(r * row);
    out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(row));
  }
  return Tensor(Shape{rows.size(), values.dim(1), values.dim(2)}, std::move(out));
}

// Endless stream of shuffled indices; reshuffles on every pass.
class IndexStream {
 public:
  IndexStream(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::vector<std::size_t> take(std::size_t k) {
    std::vector<std::size_t> out;
    while (out.size() < k) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

ordered_json model_json(const ModelConfig& m) {
  return {{"channels", m.channels},
          {"length", m.length},
          {"classes", m.classes},
          {"multiscale", m.variant ? std::string(to_string(*m.variant)) : std::string("none")},
          {"levels", m.num_levels()},
          {"widths", m.widths},
          {"kernels", m.kernels},
          {"seed", m.seed},
          {"prediction_head", std::string(to_string(m.head))}};
}

ordered_json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch", t.batch},
          {"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"weight_decay", t.weight_decay},
          {"evidential", t.evidential ? std::string(to_string(*t.evidential)) : std::string("none")},
          {"method", std::string(to_string(t.method))},
          {"lambda1", t.weights.lambda1},
          {"lambda2", t.weights.lambda2},
          {"lambda3", t.weights.lambda3},
          {"aux_weights", t.aux_weights},
          {"anneal_horizon", t.anneal_horizon},
          {"seed", t.seed}};
}

}  // namespace

LossWeights LossWeights::defaults(AlignMethod method) {
  LossWeights w;
  w.lambda1 = 1.0;
  w.lambda3 = 0.1;
  switch (method) {
    case AlignMethod::noadapt: w.lambda2 = 0.0; break;
    case AlignMethod::ddc: w.lambda2 = 1.0; break;
    case AlignMethod::coral: w.lambda2 = 1.0; break;
    case AlignMethod::homm: w.lambda2 = 0.1; break;
    case AlignMethod::mmda: w.lambda2 = 0.5; break;
  }
  return w;
}

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3}) {
    if (!std::isfinite(l) || l < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch < 2) throw ConfigError("batch size must be at least 2");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("optimizer constants must satisfy 0 <= beta < 1 and eps > 0");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (anneal_horizon == 0) throw ConfigError("anneal horizon must be positive");
  weights.validate();
  AuxWeights{aux_weights}.validate();
}

LossTerms combined_loss(const ForwardOutput& src, const ForwardOutput* tgt, const LabelBatch& y,
                        const LossWeights& w, const AnnealSchedule& s, const LossKinds& kinds) {
  const std::string where;
  LossTerms out;
  Var cls = graph::aux_classification_loss(src.final_logits, src.aux_logits, y, kinds.aux);
  out.values.cls = cls.value().item();
  require_finite(out.values.cls, "classification", where);
  Var total = ops::scale(cls, w.lambda1);

  if (tgt != nullptr && kinds.method != AlignMethod::noadapt && w.lambda2 > 0.0) {
    Var dom = graph::domain_loss(src.mixed, tgt->mixed, kinds.method);
    out.values.domain = dom.value().item();
    require_finite(out.values.domain, "domain", where);
    total = ops::add(total, ops::scale(dom, w.lambda2));
  }

  if (kinds.evidential && w.lambda3 > 0.0) {
    require_finite(src.evidence, "evidence", where);
    const double n = static_cast<double>(y.size());
    Var evi = ops::scale(graph::evidential_total(graph::alpha_from_evidence(src.evidence), y, s, *kinds.evidential),
                         1.0 / n);
    out.values.evidential = evi.value().item();
    require_finite(out.values.evidential, "evidential", where);
    total = ops::add(total, ops::scale(evi, w.lambda3));
  }
  out.values.total = total.value().item();
  require_finite(out.values.total, "total", where);
  out.total = total;
  return out;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  ordered_json head = {{"type", "config"}, {"seed", seed}, {"config", ordered_json::parse(config_json)}};
  out += head.dump() + "\n";
  for (const auto& w : warnings) out += ordered_json{{"type", "warning"}, {"message", w}}.dump() + "\n";
  for (const auto& e : epochs) {
    ordered_json j = {{"type", "epoch"},      {"epoch", e.epoch},          {"cls", e.mean.cls},
                      {"domain", e.mean.domain}, {"evidential", e.mean.evidential}, {"total", e.mean.total},
                      {"anneal", e.anneal},    {"batches", e.batches}};
    j["source_val_f1"] = e.source_val_f1 ? ordered_json(*e.source_val_f1) : ordered_json(nullptr);
    if (e.seconds) j["seconds"] = *e.seconds;
    out += j.dump() + "\n";
  }
  return out;
}

std::string config_json(const ModelConfig& m, const TrainConfig& t) {
  return ordered_json{{"model", model_json(m)}, {"train", train_json(t)}}.dump();
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const TimeSeriesBatch& source,
                  const TimeSeriesBatch* target, const TimeSeriesBatch* source_val) {
  cfg.validate();
  source.validate();
  if (!source.has_labels()) throw ConfigError("source data must carry labels");
  if (source.size() < 2) throw ConfigError("source data needs at least 2 samples");
  if (source.classes != model_cfg.classes) throw ConfigError("source class count does not match the model");
  if (source.channels() != model_cfg.channels || source.length() != model_cfg.length) {
    throw ShapeError("source windows do not match the model input shape");
  }
  if (cfg.alignment_active()) {
    if (target == nullptr) throw ConfigError("method " + std::string(to_string(cfg.method)) + " needs target data");
    if (target->size() < 2) throw ConfigError("target data needs at least 2 samples");
    if (target->channels() != model_cfg.channels || target->length() != model_cfg.length) {
      throw ShapeError("target windows do not match the model input shape");
    }
  }

  TrainResult res;
  ModelConfig mc = model_cfg;
  mc.head = cfg.evidential_active() ? PredictionHead::evidential : PredictionHead::softmax;
  res.params = init(mc);
  ModelParams& mp = res.params;
  res.log.seed = cfg.seed;
  res.log.config_json = config_json(mc, cfg);
  if (cfg.method == AlignMethod::noadapt && cfg.weights.lambda2 != 0.0) {
    res.log.warnings.push_back("method noadapt ignores lambda2 = " + std::to_string(cfg.weights.lambda2) +
                               "; the domain term is fixed at 0");
  }
  if (cfg.evidential && cfg.weights.lambda3 == 0.0) {
    res.log.warnings.push_back("lambda3 = 0 disables the evidential loss; predictions use the softmax head");
  }

  LossKinds kinds{cfg.method, cfg.evidential,
                  cfg.aux_weights.empty() ? AuxWeights::defaults(mc.num_levels()) : AuxWeights{cfg.aux_weights}};
  if (!mc.variant) kinds.aux.lambda.clear();
  if (kinds.aux.lambda.size() != (mc.variant ? mc.num_scales() : 0)) {
    throw ConfigError("expected " + std::to_string(mc.variant ? mc.num_scales() : 0) + " auxiliary weights, got " +
                      std::to_string(kinds.aux.lambda.size()));
  }

  Rng shuffle_rng(cfg.seed);
  Rng target_rng(cfg.seed ^ 0x5851f42d4c957f2dull);
  Rng pool_rng(cfg.seed ^ 0x2545f4914f6cdd1dull);
  std::optional<IndexStream> target_stream;
  if (cfg.alignment_active()) target_stream.emplace(target->size(), target_rng);

  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < mp.params.size(); ++i)
    if (mp.params[i].trainable) trainable.push_back(i);
  std::vector<Tensor> m1, m2;
  for (std::size_t i : trainable) {
    m1.emplace_back(mp.params[i].value.shape());
    m2.emplace_back(mp.params[i].value.shape());
  }
  std::size_t step = 0;

  const std::size_t n = source.size();
  const std::size_t bs = std::min(cfg.batch, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const AnnealSchedule sched{epoch, cfg.anneal_horizon};
    EpochRecord rec;
    rec.epoch = epoch;
    rec.anneal = anneal_coeff(sched);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      if (len < 2) break;  // batch statistics need two samples
      const std::span<const std::size_t> rows(order.data() + start, len);
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back((*source.labels)[r]);
      const LabelBatch y(std::move(labels), mc.classes);
      const std::string where = " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(rec.batches);

      Tape tape;
      const auto bound = bind_params(tape, mp);
      const ForwardOutput src = forward(mp, bound, tape.constant(gather(source.values, rows)), Mode::train, &pool_rng);
      std::optional<ForwardOutput> tgt;
      if (target_stream) {
        const auto trows = target_stream->take(std::min(len, target->size()));
        tgt = forward(mp, bound, tape.constant(gather(target->values, trows)), Mode::train, &pool_rng);
      }
      LossTerms terms;
      try {
        terms = combined_loss(src, tgt ? &*tgt : nullptr, y, cfg.weights, sched, kinds);
      } catch (const NumericalAbort& e) {
        throw NumericalAbort(e.what() + where);
      }
      const auto grads = backward(tape, terms.total);

      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t j = 0; j < trainable.size(); ++j) {
        Tensor& theta = mp.params[trainable[j]].value;
        const Tensor& g = grads[j];
        for (std::size_t e = 0; e < theta.size(); ++e) {
          const double ge = g[e] + cfg.weight_decay * theta[e];
          m1[j][e] = cfg.beta1 * m1[j][e] + (1.0 - cfg.beta1) * ge;
          m2[j][e] = cfg.beta2 * m2[j][e] + (1.0 - cfg.beta2) * ge * ge;
          theta[e] -= cfg.lr * (m1[j][e] / c1) / (std::sqrt(m2[j][e] / c2) + cfg.adam_eps);
        }
        if (!theta.all_finite()) {
          throw NumericalAbort("non-finite parameter '" + mp.params[trainable[j]].name + "' after update" + where);
        }
      }
      rec.mean.cls += terms.values.cls;
      rec.mean.domain += terms.values.domain;
      rec.mean.evidential += terms.values.evidential;
      rec.mean.total += terms.values.total;
      ++rec.batches;
    }
    if (rec.batches > 0) {
      const double b = static_cast<double>(rec.batches);
      rec.mean.cls /= b;
      rec.mean.domain /= b;
      rec.mean.evidential /= b;
      rec.mean.total /= b;
    }
    if (source_val != nullptr && source_val->has_labels() && source_val->size() > 0) {
      const auto inf = infer(mp, source_val->values);
      rec.source_val_f1 = macro_f1(inf.predicted, *source_val->labels, mc.classes);
    }
    if (cfg.record_timing) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    res.log.epochs.push_back(rec);
  }
  return res;
}

Lambda3Selection select_lambda3(std::span<const double> grid, const ModelConfig& model_cfg, const TrainConfig& cfg,
                                const TimeSeriesBatch& source, const TimeSeriesBatch& target,
                                const TimeSeriesBatch& target_val) {
  if (grid.empty()) throw ConfigError("lambda3 grid is empty");
  if (!target_val.has_labels()) throw ConfigError("lambda3 selection needs a labeled target validation set");
  Lambda3Selection sel;
  std::optional<std::size_t> best;
  for (double l3 : grid) {
    TrainConfig run = cfg;
    run.weights.lambda3 = l3;
    Lambda3Row row{l3, std::nullopt, {}};
    try {
      run.validate();
      const auto res = train(model_cfg, run, source, &target);
      const auto inf = infer(res.params, target_val.values);
      row.target_f1 = macro_f1(inf.predicted, *target_val.labels, model_cfg.classes);
    } catch (const NumericalAbort& e) {
      row.failure = e.what();
    }
    sel.table.push_back(row);
    if (row.target_f1) {
      const auto& cur = sel.table.back();
      if (!best || *cur.target_f1 > *sel.table[*best].target_f1 ||
          (*cur.target_f1 == *sel.table[*best].target_f1 && cur.lambda3 < sel.table[*best].lambda3)) {
        best = sel.table.size() - 1;
      }
    }
  }
  if (!best) throw NumericalAbort("every lambda3 grid point aborted numerically");
  sel.best = sel.table[*best].lambda3;
  return sel;
}

}  // namespace evuda
