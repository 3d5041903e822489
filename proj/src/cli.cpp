#include "evuda/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "evuda/alignment.hpp"
#include "evuda/data.hpp"
#include "evuda/errors.hpp"
#include "evuda/gradient_suites.hpp"
#include "evuda/metrics.hpp"
#include "evuda/model.hpp"
#include "evuda/trainer.hpp"
#include "evuda/version.hpp"
#include "json.hpp"

namespace evuda {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr const char* kOutDirEnv = "EVUDA_OUT_DIR";

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) {
    T v{};
    if (!CLI::detail::lexical_cast(item, v)) throw ConfigError(std::string(what) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// Reads flat key=value lines and appends `--key=value` for every key that the
// command line does not already set, so explicit flags win.
std::vector<std::string> merge_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  auto given = [&](const std::string& key) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
  };
  std::vector<std::string> extra;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || key == "config") throw ConfigError(path + ":" + std::to_string(line_no) + ": invalid key");
    if (!given(key)) extra.push_back("--" + key + "=" + value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

fs::path resolve_out_dir(const std::string& flag) {
  std::string dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    dir = env != nullptr && *env != '\0' ? env : ".";
  }
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ResourceError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Resolved value of every option of a subcommand, in registration order.
ordered_json option_echo(const CLI::App& sub) {
  ordered_json echo = ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      if (opt->get_type_size() == 0 && value.empty()) value = "true";
    } else {
      value = opt->get_default_str();
    }
    echo[name] = value;
  }
  return echo;
}

struct Report {
  std::string command;
  ordered_json echo;

  ordered_json header() const {
    return {{"tool", "evuda"}, {"version", kVersion}, {"command", command}, {"config", echo}};
  }
  // CSV files carry the same provenance as comment lines.
  std::string csv_preamble() const {
    return "# evuda " + std::string(kVersion) + " " + command + "\n# config " + echo.dump() + "\n";
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ResourceError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ResourceError("write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

TimeSeriesBatch load_batch(const std::string& path, const char* role) {
  try {
    return read_evts(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot load ") + role + " data: " + e.what());
  }
}

void check_matches_model(const TimeSeriesBatch& b, const ModelConfig& m, const char* role) {
  if (b.classes != m.classes) {
    throw ConfigError(std::string(role) + " data declares " + std::to_string(b.classes) + " classes, model has " +
                      std::to_string(m.classes));
  }
  if (b.channels() != m.channels || b.length() != m.length) {
    throw ConfigError(std::string(role) + " windows are [" + std::to_string(b.channels()) + "," +
                      std::to_string(b.length()) + "], model expects [" + std::to_string(m.channels) + "," +
                      std::to_string(m.length) + "]");
  }
}

// ---- option groups ---------------------------------------------------------

struct GenDataOpts {
  std::size_t classes = 4, channels = 2, length = 128, per_class = 50;
  double noise = 0.3;
  std::string shift = "amp=1.0,noise=0,freq=0";
  std::uint64_t seed = 0;
  std::string out_dir;
};

struct TrainOpts {
  std::string source, target, out_dir, model_out, log_out;
  double val_fraction = 0.2;
  std::string multiscale = "M";
  std::size_t levels = 2;
  std::string widths = "64,64,64", kernels = "8,5,3";
  std::size_t epochs = 40, batch = 32, anneal_horizon = 10;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, weight_decay = 0.0;
  std::string evidential = "ce", method = "noadapt";
  double lambda1 = 1.0;
  std::string lambda2 = "auto";
  double lambda3 = 0.1;
  std::string aux_weights;
  std::uint64_t seed = 0;
  bool timing = false;
};

void add_model_train_options(CLI::App* sub, TrainOpts& o) {
  sub->add_option("--source", o.source, "Labeled source EVTS file")->required();
  sub->add_option("--target", o.target, "Target EVTS file (labels ignored)");
  sub->add_option("--val-fraction", o.val_fraction, "Fraction of source held out for validation (0 disables)")
      ->check(CLI::Range(0.0, 0.95));
  sub->add_option("--multiscale", o.multiscale, "Down-sampling variant")
      ->check(CLI::IsMember({"none", "L", "LM", "M", "A", "R"}));
  sub->add_option("--levels", o.levels, "Down-sampling levels M (scales = M + 1)");
  sub->add_option("--widths", o.widths, "Conv widths per block, comma separated");
  sub->add_option("--kernels", o.kernels, "Conv kernel sizes per block, comma separated");
  sub->add_option("--epochs", o.epochs, "Training epochs");
  sub->add_option("--batch", o.batch, "Batch size");
  sub->add_option("--lr", o.lr, "Learning rate");
  sub->add_option("--beta1", o.beta1, "Adam first-moment decay");
  sub->add_option("--beta2", o.beta2, "Adam second-moment decay");
  sub->add_option("--adam-eps", o.adam_eps, "Adam epsilon");
  sub->add_option("--weight-decay", o.weight_decay, "L2 weight decay");
  sub->add_option("--evidential", o.evidential, "Evidential loss")->check(CLI::IsMember({"none", "ml", "ce", "mse"}));
  sub->add_option("--method", o.method, "Alignment method")
      ->check(CLI::IsMember({"noadapt", "ddc", "coral", "homm", "mmda"}));
  sub->add_option("--lambda1", o.lambda1, "Classification weight");
  sub->add_option("--lambda2", o.lambda2, "Alignment weight, or 'auto' for the method default");
  sub->add_option("--lambda3", o.lambda3, "Evidential weight");
  sub->add_option("--aux-weights", o.aux_weights, "Aux head weights per scale, comma separated (empty: defaults)");
  sub->add_option("--anneal-horizon", o.anneal_horizon, "Epochs until the KL coefficient reaches 1");
  sub->add_option("--seed", o.seed, "Seed for init, shuffling, pooling and splits");
  sub->add_flag("--timing", o.timing, "Record per-epoch wall-clock in the log");
  sub->add_option("--out-dir", o.out_dir, std::string("Output directory (default $") + kOutDirEnv + " or .)");
}

ModelConfig model_config(const TrainOpts& o, const TimeSeriesBatch& source) {
  ModelConfig m;
  m.channels = source.channels();
  m.length = source.length();
  m.classes = source.classes;
  if (o.multiscale == "none") {
    m.variant.reset();
    m.levels = 0;
  } else {
    m.variant = parse_scale_variant(o.multiscale);
    m.levels = o.levels;
  }
  m.widths = parse_list<std::size_t>(o.widths, "--widths");
  m.kernels = parse_list<std::size_t>(o.kernels, "--kernels");
  m.seed = o.seed;
  m.validate();
  return m;
}

TrainConfig train_config(const TrainOpts& o) {
  TrainConfig t;
  t.epochs = o.epochs;
  t.batch = o.batch;
  t.lr = o.lr;
  t.beta1 = o.beta1;
  t.beta2 = o.beta2;
  t.adam_eps = o.adam_eps;
  t.weight_decay = o.weight_decay;
  t.evidential = o.evidential == "none" ? std::nullopt : std::optional(parse_evidential_loss(o.evidential));
  t.method = parse_align_method(o.method);
  t.weights = LossWeights::defaults(t.method);
  t.weights.lambda1 = o.lambda1;
  if (o.lambda2 != "auto") {
    const auto v = parse_list<double>(o.lambda2, "--lambda2");
    if (v.size() != 1) throw ConfigError("--lambda2 takes one number or 'auto'");
    t.weights.lambda2 = v[0];
  }
  t.weights.lambda3 = o.lambda3;
  t.aux_weights = parse_list<double>(o.aux_weights, "--aux-weights");
  t.anneal_horizon = o.anneal_horizon;
  t.seed = o.seed;
  t.record_timing = o.timing;
  t.validate();
  return t;
}

struct TrainInputs {
  TimeSeriesBatch train_source;
  std::optional<TimeSeriesBatch> source_val;
  std::optional<TimeSeriesBatch> target;
  std::vector<std::string> warnings;
};

TrainInputs load_train_inputs(const TrainOpts& o, bool need_target) {
  TrainInputs in;
  TimeSeriesBatch source = load_batch(o.source, "source");
  if (!source.has_labels()) throw ConfigError("source file '" + o.source + "' has no labels");
  if (o.val_fraction > 0.0) {
    auto parts = split(source, 1.0 - o.val_fraction, derive_seed(o.seed, 10));
    in.train_source = std::move(parts.train);
    if (parts.test.size() > 0) in.source_val = std::move(parts.test);
    in.warnings = std::move(parts.warnings);
  } else {
    in.train_source = std::move(source);
  }
  if (!o.target.empty()) {
    in.target = load_batch(o.target, "target");
  } else if (need_target) {
    throw ConfigError("--target is required unless --method noadapt");
  }
  return in;
}

// ---- commands --------------------------------------------------------------

int cmd_gen_data(const GenDataOpts& o, const Report& rep, std::ostream& out) {
  SynthSpec spec;
  spec.classes = o.classes;
  spec.channels = o.channels;
  spec.length = o.length;
  spec.per_class = o.per_class;
  spec.noise = o.noise;
  for (const auto& item : split_list(o.shift)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--shift entries must be key=value, got '" + item + "'");
    const std::string key = trim(item.substr(0, eq));
    const auto v = parse_list<double>(item.substr(eq + 1), "--shift");
    if (v.size() != 1) throw ConfigError("--shift " + key + " needs one number");
    if (key == "amp") spec.amp_scale = v[0];
    else if (key == "noise") spec.target_noise = v[0];
    else if (key == "freq") spec.freq_offset = v[0];
    else throw ConfigError("unknown --shift key '" + key + "' (expected amp, noise, freq)");
  }
  const fs::path dir = resolve_out_dir(o.out_dir);
  SynthSpec src_spec = spec, tgt_spec = spec;
  src_spec.seed = derive_seed(o.seed, 0);
  tgt_spec.seed = derive_seed(o.seed, 1);
  const auto source = synth_generate(src_spec, Domain::source);
  const auto target = synth_generate(tgt_spec, Domain::target);
  write_evts(source, (dir / "source.evts").string());
  write_evts(target, (dir / "target.evts").string());

  ordered_json j = rep.header();
  ordered_json files = ordered_json::array();
  for (const auto* b : {&source, &target}) {
    std::vector<std::size_t> counts(b->classes, 0);
    for (int l : *b->labels) ++counts[static_cast<std::size_t>(l)];
    const char* name = b == &source ? "source" : "target";
    files.push_back({{"domain", name}, {"file", std::string(name) + ".evts"}, {"samples", b->size()},
                     {"per_class", counts}});
    out << name << ".evts: " << b->size() << " samples, per class";
    for (auto c : counts) out << ' ' << c;
    out << '\n';
  }
  j["files"] = files;
  write_json(dir / "gen_data_report.json", j);
  return kExitOk;
}

int cmd_train(const TrainOpts& o, const std::string& model_out, const std::string& log_out, const Report& rep,
              std::ostream& out) {
  const TrainConfig tc = train_config(o);
  auto in = load_train_inputs(o, tc.alignment_active());
  const ModelConfig mc = model_config(o, in.train_source);
  if (in.target) check_matches_model(*in.target, mc, "target");
  const fs::path dir = resolve_out_dir(o.out_dir);
  const fs::path model_path = model_out.empty() ? dir / "model.evtm" : fs::path(model_out);
  const fs::path log_path = log_out.empty() ? dir / "train_log.jsonl" : fs::path(log_out);

  auto res = train(mc, tc, in.train_source, in.target ? &*in.target : nullptr, in.source_val ? &*in.source_val : nullptr);
  res.log.warnings.insert(res.log.warnings.begin(), in.warnings.begin(), in.warnings.end());
  save_model(res.params, model_path.string());
  {
    // the log starts with the run echo as its own record
    ordered_json head = {{"type", "run"}};
    head.update(rep.header());
    write_text(log_path, head.dump() + "\n" + res.log.to_jsonl());
  }
  for (const auto& w : res.log.warnings) out << "warning: " << w << '\n';
  const auto& last = res.log.epochs.back();
  out << "trained " << tc.epochs << " epochs, final total loss " << num(last.mean.total);
  if (last.source_val_f1) out << ", source validation macro-F1 " << num(*last.source_val_f1);
  out << "\nmodel: " << model_path.string() << "\nlog: " << log_path.string() << '\n';
  return kExitOk;
}

struct EvalOpts {
  std::string model, data, domain = "target", out_dir, prefix = "eval";
  std::size_t bins = kDefaultEceBins, hist_bins = kDefaultUncertaintyBins;
  bool export_features = false;
};

std::string reliability_csv(const CalibrationReport& r, const Report& rep) {
  std::string s = rep.csv_preamble() + "bin,lower,upper,count,mean_confidence,accuracy\n";
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    const auto& x = r.bins[b];
    s += std::to_string(b) + "," + num(x.lower) + "," + num(x.upper) + "," + std::to_string(x.count) + "," +
         num(x.mean_confidence) + "," + num(x.accuracy) + "\n";
  }
  return s;
}

int cmd_eval(const EvalOpts& o, const Report& rep, std::ostream& out) {
  const ModelParams mp = load_model(o.model);
  const TimeSeriesBatch data = load_batch(o.data, "evaluation");
  check_matches_model(data, mp.config, "evaluation");
  const fs::path dir = resolve_out_dir(o.out_dir);
  const auto inf = infer(mp, data.values);
  const std::size_t n = data.size(), k = mp.config.classes;

  ordered_json j = rep.header();
  j["samples"] = n;
  j["prediction_head"] = std::string(to_string(mp.config.head));
  const auto ustats = uncertainty_stats(inf.uncertainty.values(), o.domain, o.hist_bins);
  j["uncertainty"] = {{"domain", ustats.domain}, {"mean", ustats.mean}, {"bins", o.hist_bins}};

  std::string preds = rep.csv_preamble() + "index,truth,prediction,confidence,uncertainty\n";
  for (std::size_t i = 0; i < n; ++i) {
    double conf = 0.0;
    for (std::size_t c = 0; c < k; ++c) conf = std::max(conf, inf.probs.at(i, c));
    preds += std::to_string(i) + "," + (data.labels ? std::to_string((*data.labels)[i]) : std::string()) + "," +
             std::to_string(inf.predicted[i]) + "," + num(conf) + "," + num(inf.uncertainty[i]) + "\n";
  }
  write_text(dir / (o.prefix + "_predictions.csv"), preds);

  std::string hist = rep.csv_preamble() + "domain,bin,lower,upper,mass\n";
  for (std::size_t b = 0; b < ustats.histogram.size(); ++b) {
    const double w = 1.0 / static_cast<double>(ustats.histogram.size());
    hist += o.domain + "," + std::to_string(b) + "," + num(w * static_cast<double>(b)) + "," +
            num(w * static_cast<double>(b + 1)) + "," + num(ustats.histogram[b]) + "\n";
  }
  write_text(dir / (o.prefix + "_uncertainty_hist.csv"), hist);

  if (data.labels) {
    const auto& y = *data.labels;
    const double f1 = macro_f1(inf.predicted, y, k);
    const auto cm = confusion_matrix(inf.predicted, y, k);
    const auto cal = ece(inf.probs, y, o.bins);
    const auto cal_dir = ece(inf.dirichlet_probs, y, o.bins);
    const auto cal_soft = ece(inf.softmax_probs, y, o.bins);
    j["macro_f1"] = f1;
    j["f1_zero_division"] = "classes with no true and no predicted samples score 0";
    j["ece"] = cal.ece;
    j["ece_evidential_head"] = cal_dir.ece;
    j["ece_softmax_head"] = cal_soft.ece;
    j["ece_bins"] = o.bins;
    j["confusion"] = cm;
    std::string cms = rep.csv_preamble() + "truth";
    for (std::size_t c = 0; c < k; ++c) cms += ",pred_" + std::to_string(c);
    cms += "\n";
    for (std::size_t r = 0; r < k; ++r) {
      cms += std::to_string(r);
      for (std::size_t c = 0; c < k; ++c) cms += "," + std::to_string(cm[r][c]);
      cms += "\n";
    }
    write_text(dir / (o.prefix + "_confusion.csv"), cms);
    write_text(dir / (o.prefix + "_reliability.csv"), reliability_csv(cal, rep));
    write_text(dir / (o.prefix + "_reliability_softmax.csv"), reliability_csv(cal_soft, rep));
    out << "macro-F1 " << num(f1) << ", ECE " << num(cal.ece) << ", mean uncertainty " << num(ustats.mean) << '\n';
  } else {
    j["macro_f1"] = nullptr;
    j["ece"] = nullptr;
    out << "unlabeled data: predictions and uncertainty only; mean uncertainty " << num(ustats.mean) << '\n';
  }
  if (o.export_features) {
    std::string f = rep.csv_preamble() + "index";
    for (std::size_t c = 0; c < inf.features.dim(1); ++c) f += ",f" + std::to_string(c);
    f += "\n";
    for (std::size_t i = 0; i < n; ++i) {
      f += std::to_string(i);
      for (std::size_t c = 0; c < inf.features.dim(1); ++c) f += "," + num(inf.features.at(i, c));
      f += "\n";
    }
    write_text(dir / (o.prefix + "_features.csv"), f);
  }
  write_json(dir / (o.prefix + "_report.json"), j);
  return kExitOk;
}

struct DiscrepancyOpts {
  std::string model, source, target, out_dir, prefix = "discrepancy";
  std::size_t n_proj = kDefaultProjections;
  std::string scales = "0.5,1,2";
  std::uint64_t seed = 0;
};

int cmd_discrepancy(const DiscrepancyOpts& o, const Report& rep, std::ostream& out) {
  const ModelParams mp = load_model(o.model);
  const auto src = load_batch(o.source, "source");
  const auto tgt = load_batch(o.target, "target");
  check_matches_model(src, mp.config, "source");
  check_matches_model(tgt, mp.config, "target");
  const auto scales = parse_list<double>(o.scales, "--bandwidth-scales");
  if (scales.empty()) throw ConfigError("--bandwidth-scales is empty");
  const fs::path dir = resolve_out_dir(o.out_dir);
  const Tensor fs_ = infer(mp, src.values).features;
  const Tensor ft = infer(mp, tgt.values).features;
  const auto bws = median_bandwidths(fs_, ft, scales);
  const double mmd = mmd_rbf(fs_, ft, bws);
  Rng rng(o.seed);
  const double wd = sliced_wd(fs_, ft, o.n_proj, rng);
  ordered_json j = rep.header();
  j["note"] =
      "measurement only: computed on the trained model's mixed features of both domains; not a training loss";
  j["feature_width"] = fs_.dim(1);
  j["mmd_rbf"] = mmd;
  j["bandwidth_scales"] = scales;
  j["bandwidths"] = bws;
  j["sliced_wd"] = wd;
  j["n_proj"] = o.n_proj;
  j["seed"] = o.seed;
  write_json(dir / (o.prefix + "_report.json"), j);
  out << "mmd_rbf " << num(mmd) << ", sliced_wd " << num(wd) << " (n_proj " << o.n_proj << ")\n";
  return kExitOk;
}

struct GradcheckOpts {
  std::string suite = "all", report;
  std::size_t points = 100;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckOpts& o, const Report& rep, std::ostream& out) {
  std::vector<std::string> names = o.suite == "all" ? gradient_suite_names() : split_list(o.suite);
  if (names.empty()) throw ConfigError("--suite is empty");
  bool ok = true;
  ordered_json rows = ordered_json::array();
  out << std::left << std::setw(8) << "suite" << std::setw(8) << "points" << std::setw(14) << "worst"
      << std::setw(10) << "tolerance" << "status\n";
  for (const auto& name : names) {
    const auto r = run_gradient_suite(name, o.points, o.seed);
    ok = ok && r.passed();
    std::ostringstream worst;
    worst << std::scientific << std::setprecision(3) << r.worst;
    out << std::setw(8) << r.name << std::setw(8) << r.points << std::setw(14) << worst.str() << std::setw(10)
        << num(r.tolerance) << (r.passed() ? "pass" : "FAIL") << '\n';
    rows.push_back({{"suite", r.name}, {"points", r.points}, {"worst", r.worst}, {"tolerance", r.tolerance},
                    {"passed", r.passed()}});
  }
  if (!o.report.empty()) {
    ordered_json j = rep.header();
    j["suites"] = rows;
    j["passed"] = ok;
    write_json(o.report, j);
  }
  return ok ? kExitOk : kExitCheckFailed;
}

struct SelectOpts {
  std::string target_val, grid = "0.01,0.1,0.5,1.0";
  double target_val_fraction = 0.3;
};

int cmd_select_lambda3(const TrainOpts& o, const SelectOpts& s, const Report& rep, std::ostream& out) {
  const TrainConfig tc = train_config(o);
  TrainOpts no_val = o;
  no_val.val_fraction = 0.0;
  auto in = load_train_inputs(no_val, true);
  const ModelConfig mc = model_config(o, in.train_source);
  check_matches_model(*in.target, mc, "target");
  const auto grid = parse_list<double>(s.grid, "--grid");
  TimeSeriesBatch target_train, target_val;
  if (!s.target_val.empty()) {
    target_train = *in.target;
    target_val = load_batch(s.target_val, "target validation");
    check_matches_model(target_val, mc, "target validation");
  } else {
    if (!in.target->has_labels()) {
      throw ConfigError("lambda3 selection needs target labels: pass --target-val or a labeled --target");
    }
    auto parts = split(*in.target, 1.0 - s.target_val_fraction, derive_seed(o.seed, 20));
    target_train = std::move(parts.train);
    target_val = std::move(parts.test);
  }
  if (!target_val.has_labels() || target_val.size() == 0) throw ConfigError("target validation set has no labels");
  const fs::path dir = resolve_out_dir(o.out_dir);
  const auto sel = select_lambda3(grid, mc, tc, in.train_source, target_train, target_val);

  std::string csv = rep.csv_preamble() + "lambda3,target_val_macro_f1,status\n";
  ordered_json rows = ordered_json::array();
  for (const auto& r : sel.table) {
    csv += num(r.lambda3) + "," + (r.target_f1 ? num(*r.target_f1) : std::string()) + "," +
           (r.target_f1 ? "ok" : "failed") + "\n";
    ordered_json row = {{"lambda3", r.lambda3}};
    row["target_val_macro_f1"] = r.target_f1 ? ordered_json(*r.target_f1) : ordered_json(nullptr);
    if (!r.failure.empty()) row["failure"] = r.failure;
    rows.push_back(row);
    out << "lambda3 " << num(r.lambda3) << ": "
        << (r.target_f1 ? "target macro-F1 " + num(*r.target_f1) : "failed (" + r.failure + ")") << '\n';
  }
  write_text(dir / "lambda3_table.csv", csv);
  ordered_json j = rep.header();
  j["best_lambda3"] = sel.best;
  j["tie_break"] = "smaller lambda3";
  j["table"] = rows;
  write_json(dir / "lambda3_report.json", j);
  out << "best lambda3 " << num(sel.best) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty-aware domain adaptation toolkit for time series", "evuda"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);
  std::string config_path;
  app.add_option("--config", config_path, "Flat key=value file; command-line flags take precedence");
  app.footer(std::string("Environment: ") + kOutDirEnv +
             " sets the default output directory.\nExit codes: 0 ok, 1 check failed, 2 usage or config error, "
             "3 numerical abort.");

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic source.evts and target.evts");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes");
  gen_cmd->add_option("--channels", gen.channels, "Channels per window");
  gen_cmd->add_option("--length", gen.length, "Window length");
  gen_cmd->add_option("--n-per-class", gen.per_class, "Samples per class and domain");
  gen_cmd->add_option("--noise", gen.noise, "Gaussian noise sigma in both domains");
  gen_cmd->add_option("--shift", gen.shift, "Target shift: amp=<scale>,noise=<sigma>,freq=<cycles>");
  gen_cmd->add_option("--seed", gen.seed, "Seed");
  gen_cmd->add_option("--out-dir", gen.out_dir, std::string("Output directory (default $") + kOutDirEnv + " or .)");

  TrainOpts tr;
  std::string model_out, log_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_model_train_options(train_cmd, tr);
  train_cmd->add_option("--model-out", model_out, "Model path (default <out-dir>/model.evtm)");
  train_cmd->add_option("--log-out", log_out, "Log path (default <out-dir>/train_log.jsonl)");

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on an EVTS file");
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--data", ev.data, "EVTS file")->required();
  eval_cmd->add_option("--domain", ev.domain, "Domain tag recorded with the uncertainty statistics");
  eval_cmd->add_option("--bins", ev.bins, "ECE bins")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--hist-bins", ev.hist_bins, "Uncertainty histogram bins")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--export-features", ev.export_features, "Also write mixed features per sample");
  eval_cmd->add_option("--prefix", ev.prefix, "Report file prefix");
  eval_cmd->add_option("--out-dir", ev.out_dir, std::string("Output directory (default $") + kOutDirEnv + " or .)");

  DiscrepancyOpts dc;
  auto* disc_cmd = app.add_subcommand("discrepancy", "Measure RBF-MMD and sliced Wasserstein on mixed features");
  disc_cmd->add_option("--model", dc.model, "Model file")->required();
  disc_cmd->add_option("--source", dc.source, "Source EVTS file")->required();
  disc_cmd->add_option("--target", dc.target, "Target EVTS file")->required();
  disc_cmd->add_option("--n-proj", dc.n_proj, "Random projections for sliced Wasserstein")->check(CLI::PositiveNumber);
  disc_cmd->add_option("--bandwidth-scales", dc.scales, "Multipliers of the median pairwise distance");
  disc_cmd->add_option("--seed", dc.seed, "Seed for projection directions");
  disc_cmd->add_option("--prefix", dc.prefix, "Report file prefix");
  disc_cmd->add_option("--out-dir", dc.out_dir, std::string("Output directory (default $") + kOutDirEnv + " or .)");

  GradcheckOpts gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of the analytic gradients");
  grad_cmd->add_option("--suite", gc.suite, "all, or a comma list of ml,ce,mse,kl,ddc,coral,homm,mmda,e2e");
  grad_cmd->add_option("--points", gc.points, "Random points per suite")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--seed", gc.seed, "Seed");
  grad_cmd->add_option("--report", gc.report, "Optional JSON report path");

  TrainOpts sl_train;
  SelectOpts sl;
  auto* sel_cmd = app.add_subcommand("select-lambda3", "Pick the evidential weight by target validation macro-F1");
  add_model_train_options(sel_cmd, sl_train);
  sel_cmd->add_option("--grid", sl.grid, "Comma-separated lambda3 values");
  sel_cmd->add_option("--target-val", sl.target_val, "Labeled target validation EVTS (default: split of --target)");
  sel_cmd->add_option("--target-val-fraction", sl.target_val_fraction, "Held-out share of a labeled --target")
      ->check(CLI::Range(0.05, 0.95));

  try {
    std::vector<std::string> args = merge_config_file(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::Success&) {
    // help or version
    std::ostringstream help;
    try {
      throw;
    } catch (const CLI::CallForVersion&) {
      out << kVersion << '\n';
    } catch (const CLI::Error&) {
      const CLI::App* shown = &app;
      for (const auto* sub : app.get_subcommands()) shown = sub;
      out << shown->help();
    }
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const Report rep{sub->get_name(), option_echo(*sub)};
    if (sub == gen_cmd) return cmd_gen_data(gen, rep, out);
    if (sub == train_cmd) return cmd_train(tr, model_out, log_out, rep, out);
    if (sub == eval_cmd) return cmd_eval(ev, rep, out);
    if (sub == disc_cmd) return cmd_discrepancy(dc, rep, out);
    if (sub == grad_cmd) return cmd_gradcheck(gc, rep, out);
    if (sub == sel_cmd) return cmd_select_lambda3(sl_train, sl, rep, out);
  } catch (const NumericalAbort& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace evuda
