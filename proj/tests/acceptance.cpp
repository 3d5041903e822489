// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "evuda/cli.hpp"
#include "evuda/errors.hpp"
#include "evuda/evidential.hpp"
#include "evuda/gradient_suites.hpp"
#include "oracles.hpp"
#include "uda_experiment.hpp"

using namespace evuda;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- AC1 -------------------------------------------------------------------

Outcome closed_form() {
  auto dir = [](std::initializer_list<double> a) {
    return DirichletBatch::from_alpha(Tensor(Shape{1, a.size()}, std::vector<double>(a)));
  };
  const LabelBatch y0({0}, 2);
  struct Case {
    double got, want;
  };
  const Case cases[] = {
      {loss_ce(dir({2, 1}), y0)[0], 0.5},
      {loss_ml(dir({1, 1}), y0)[0], std::log(2.0)},
      {loss_mse(dir({1, 1}), y0)[0], 2.0 / 3.0},
      {kl_to_uniform(Tensor(Shape{1, 2}, {2, 1}))[0], std::log(2.0) - 0.5},
      {anneal_coeff({0, 10}), 0.0},
      {anneal_coeff({5, 10}), 0.5},
      {anneal_coeff({20, 10}), 1.0},
  };
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, std::abs(c.got - c.want));
  return {worst <= 1e-9, "max abs error " + fmt("%.2e", worst) + " (tol 1e-9)"};
}

// ---- AC2 -------------------------------------------------------------------

Outcome monte_carlo() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> uk(2, 4);
  std::uniform_real_distribution<double> ua(1.0, 6.0);
  int misses = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = static_cast<std::size_t>(uk(rng));
    std::vector<double> a(k);
    for (auto& v : a) v = ua(rng);
    const int label = static_cast<int>(rng() % k);
    const auto d = DirichletBatch::from_alpha(Tensor(Shape{1, k}, a));
    const LabelBatch y({label}, k);
    const auto mc = oracle::dirichlet_mc(a, label, 1000000, rng);
    const double z[] = {std::abs(loss_ce(d, y)[0] - mc.ce.mean) / mc.ce.std_error,
                        std::abs(loss_mse(d, y)[0] - mc.mse.mean) / mc.mse.std_error,
                        std::abs(loss_ml(d, y)[0] - mc.ml.mean) / mc.ml.std_error};
    for (double v : z) {
      worst_z = std::max(worst_z, v);
      if (!(v <= 3.0)) ++misses;
    }
  }
  return {misses == 0, "60 comparisons, " + std::to_string(misses) + " beyond 3 SE, worst " + fmt("%.2f", worst_z) +
                           " SE"};
}

// ---- AC3 -------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  for (const auto& name : gradient_suite_names()) {
    const auto r = run_gradient_suite(name, 100, 17);
    o.pass = o.pass && r.passed();
    o.detail += name + "=" + fmt("%.1e", r.worst) + (r.passed() ? " " : "(FAIL) ");
  }
  o.detail += "(tol 1e-4, e2e 1e-3)";
  return o;
}

// ---- AC4 -------------------------------------------------------------------

Outcome metric_oracles() {
  const double f1 = macro_f1(std::vector<int>{0, 1, 1, 1}, std::vector<int>{0, 0, 1, 1}, 2);
  const Tensor p(Shape{4, 2}, {0.9, 0.1, 0.1, 0.9, 0.6, 0.4, 0.4, 0.6});
  const double e = ece(p, std::vector<int>{0, 1, 0, 0}, 2).ece;
  const double rho = spearman(std::vector<double>{1, 2, 3}, std::vector<double>{2, 1, 3});

  std::mt19937_64 rng(3);
  std::gamma_distribution<double> g(0.7, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 100000;
  Tensor probs(Shape{n, 3});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += (probs.at(i, c) = g(rng));
    for (std::size_t c = 0; c < 3; ++c) probs.at(i, c) /= s;
    const double r = u(rng);
    double acc = 0.0;
    y[i] = 2;
    for (int c = 0; c < 3; ++c) {
      acc += probs.at(i, static_cast<std::size_t>(c));
      if (r < acc) {
        y[i] = c;
        break;
      }
    }
  }
  const double calibrated = ece(probs, y).ece;
  const bool pass = std::abs(f1 - 11.0 / 15.0) <= 1e-9 && std::abs(e - 0.1) <= 1e-9 && calibrated <= 0.01 &&
                    std::abs(rho - 0.5) <= 1e-12;
  return {pass, "macro_f1 " + fmt("%.10f", f1) + ", ece " + fmt("%.10f", e) + ", calibrated ece " +
                    fmt("%.4f", calibrated) + ", spearman " + fmt("%.12f", rho)};
}

// ---- AC5 / AC6 -------------------------------------------------------------

struct Experiment {
  uda::Setup setup;
  std::size_t seeds = 10;
  double strength = 1.0;
  std::vector<double> extra_strengths;  // for the uncertainty/F1 correlation
};

Experiment experiment() {
  Experiment e;
  e.extra_strengths = {0.6, 1.4};
  return e;
}

struct Counts {
  int wins = 0;
  double mean_a = 0.0, mean_b = 0.0;
};

std::string count_str(const char* label, const Counts& c, std::size_t n, const char* what) {
  std::ostringstream s;
  s << label << ' ' << c.wins << '/' << n << " (" << what << ' ' << fmt("%.3f", c.mean_a) << " vs "
    << fmt("%.3f", c.mean_b) << ')';
  return s.str();
}

struct UdaResults {
  // [method][seed]
  std::vector<std::vector<uda::Run>> soft, evi;
  std::vector<uda::Run> flat;  // ddc + evidential without multiscale, per seed
  std::vector<double> corr_f1, corr_u;
  double seconds = 0.0;
};

UdaResults run_uda(const Experiment& ex) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  UdaResults r;
  const AlignMethod methods[] = {AlignMethod::noadapt, AlignMethod::ddc};
  r.soft.assign(2, {});
  r.evi.assign(2, {});
  for (std::size_t seed = 0; seed < ex.seeds; ++seed) {
    const auto data = uda::make_data(ex.setup, seed, ex.strength);
    for (std::size_t m = 0; m < 2; ++m) {
      r.soft[m].push_back(uda::run_one(ex.setup, data, seed, methods[m], false));
      r.evi[m].push_back(uda::run_one(ex.setup, data, seed, methods[m], true));
    }
    r.corr_f1.push_back(r.evi[0].back().target_f1);
    r.corr_u.push_back(r.evi[0].back().target_u);
    for (double s : ex.extra_strengths) {
      const auto shifted = uda::make_data(ex.setup, seed, s);
      const auto run = uda::run_one(ex.setup, shifted, seed, AlignMethod::noadapt, true);
      r.corr_f1.push_back(run.target_f1);
      r.corr_u.push_back(run.target_u);
    }
  }
  r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return r;
}

Outcome uda_directions(const Experiment& ex, const UdaResults& r, double seconds) {
  const char* names[] = {"noadapt", "ddc"};
  const std::size_t n = ex.seeds;
  bool a = true, b = true, c = true;
  std::ostringstream d;
  for (std::size_t m = 0; m < 2; ++m) {
    Counts f1, cal, unc;
    for (std::size_t s = 0; s < n; ++s) {
      const auto& soft = r.soft[m][s];
      const auto& evi = r.evi[m][s];
      f1.wins += evi.target_f1 > soft.target_f1;
      f1.mean_a += evi.target_f1 / static_cast<double>(n);
      f1.mean_b += soft.target_f1 / static_cast<double>(n);
      cal.wins += evi.target_ece <= soft.target_ece;
      cal.mean_a += evi.target_ece / static_cast<double>(n);
      cal.mean_b += soft.target_ece / static_cast<double>(n);
      unc.wins += evi.target_u > evi.source_u;
      unc.mean_a += evi.target_u / static_cast<double>(n);
      unc.mean_b += evi.source_u / static_cast<double>(n);
    }
    const bool am = f1.wins >= 6 && f1.mean_a > f1.mean_b;
    const bool bm = cal.wins >= 6;
    const bool cm = unc.wins >= 8;
    a = a && am;
    b = b && bm;
    c = c && cm;
    d << names[m] << ": " << count_str("(a) F1 evi>soft", f1, n, "mean") << (am ? "" : " FAIL") << "; "
      << count_str("(b) ECE evi<=soft", cal, n, "mean") << (bm ? "" : " FAIL") << "; "
      << count_str("(c) u tgt>src", unc, n, "mean") << (cm ? "" : " FAIL") << ". ";
  }
  const double rho = spearman(r.corr_f1, r.corr_u);
  const bool dd = r.corr_f1.size() >= 30 && rho <= -0.3;
  const bool fast = seconds <= 600.0;
  d << "(d) spearman(F1, u) over " << r.corr_f1.size() << " runs " << fmt("%.3f", rho) << (dd ? "" : " FAIL")
    << "; runtime " << fmt("%.0f", seconds) << " s" << (fast ? "" : " FAIL");
  return {a && b && c && dd && fast, d.str()};
}

Outcome multiscale_direction(const Experiment& ex, const UdaResults& r) {
  int wins = 0;
  double ms = 0.0, flat = 0.0;
  for (std::size_t s = 0; s < ex.seeds; ++s) {
    wins += r.evi[1][s].mmd < r.flat[s].mmd;
    ms += r.evi[1][s].mmd / static_cast<double>(ex.seeds);
    flat += r.flat[s].mmd / static_cast<double>(ex.seeds);
  }
  return {wins >= 6, "mmd_rbf lower with max-pool multiscale in " + std::to_string(wins) + "/" +
                         std::to_string(ex.seeds) + " seeds (mean " + fmt("%.4f", ms) + " vs " + fmt("%.4f", flat) +
                         ")"};
}

// ---- AC7 -------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

template <class E, class F>
bool rejects(F f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome determinism() {
  namespace fs = std::filesystem;
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // library level: same seeds, same bytes
  SynthSpec spec;
  spec.classes = 3;
  spec.channels = 2;
  spec.length = 32;
  spec.per_class = 6;
  spec.seed = 5;
  const auto src = synth_generate(spec, Domain::source);
  spec.seed = 6;
  spec.amp_scale = 0.7;
  const auto tgt = synth_generate(spec, Domain::target);
  ModelConfig mc;
  mc.channels = 2;
  mc.length = 32;
  mc.classes = 3;
  mc.widths = {4, 4};
  mc.kernels = {5, 3};
  mc.variant = ScaleVariant::R;
  mc.seed = 9;
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 8;
  tc.method = AlignMethod::mmda;
  tc.weights = LossWeights::defaults(tc.method);
  tc.seed = 10;
  const auto r1 = train(mc, tc, src, &tgt, &src);
  const auto r2 = train(mc, tc, src, &tgt, &src);
  const auto m1 = serialize_model(r1.params);
  expect(m1 == serialize_model(r2.params), "model bytes differ across identical runs");
  expect(r1.log.to_jsonl() == r2.log.to_jsonl(), "logs differ across identical runs");

  // round trips
  const auto e1 = serialize_evts(src);
  const auto back = deserialize_evts(e1);
  expect(back == src && serialize_evts(back) == e1, "EVTS round trip");
  const auto mp = deserialize_model(m1);
  expect(mp == r1.params && serialize_model(mp) == m1, "model round trip");
  auto unlabeled = tgt;
  unlabeled.labels.reset();
  expect(deserialize_evts(serialize_evts(unlabeled)) == unlabeled, "unlabeled EVTS round trip");

  // corruption
  for (const auto* bytes : {&e1, &m1}) {
    const bool is_model = bytes == &m1;
    auto load = [&](const std::vector<std::uint8_t>& b) {
      if (is_model) (void)deserialize_model(b);
      else (void)deserialize_evts(b);
    };
    const std::string tag = is_model ? "model" : "EVTS";
    auto flipped = *bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    expect(rejects<FormatError>([&] { load(flipped); }), tag + " bit flip accepted");
    auto truncated = *bytes;
    truncated.resize(truncated.size() - 7);
    expect(rejects<FormatError>([&] { load(truncated); }), tag + " truncation accepted");
    auto magic = *bytes;
    magic[0] = 'X';
    expect(rejects<FormatError>([&] { load(magic); }), tag + " bad magic accepted");
    auto extended = *bytes;
    extended.push_back(0);
    expect(rejects<FormatError>([&] { load(extended); }), tag + " trailing bytes accepted");
  }
  expect(rejects<ResourceError>([] { (void)load_model("/nonexistent/evuda/model.evtm"); }), "missing file");

  // CLI level: reruns into the same directory reproduce every output file
  const fs::path dir = fs::temp_directory_path() / ("evuda_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const std::string d = dir.string();
  const std::vector<std::vector<std::string>> pipeline = {
      {"gen-data", "--n-per-class", "8", "--length", "32", "--shift", "amp=0.6,noise=0.2", "--seed", "3",
       "--out-dir", d},
      {"train", "--source", d + "/source.evts", "--target", d + "/target.evts", "--method", "ddc", "--widths",
       "4,4", "--kernels", "5,3", "--epochs", "3", "--seed", "4", "--out-dir", d},
      {"eval", "--model", d + "/model.evtm", "--data", d + "/target.evts", "--export-features", "--out-dir", d},
      {"discrepancy", "--model", d + "/model.evtm", "--source", d + "/source.evts", "--target",
       d + "/target.evts", "--out-dir", d},
  };
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& args : pipeline) {
      std::ostringstream out, err;
      const int code = run_cli(args, out, err);
      expect(code == kExitOk, "cli " + args[0] + " failed: " + err.str());
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (pass == 0) first[name] = slurp(entry.path());
      else expect(first[name] == slurp(entry.path()), "cli output " + name + " differs on rerun");
    }
  }
  expect(first.size() >= 10, "cli pipeline wrote too few files");
  fs::remove_all(dir);

  Outcome o;
  o.pass = failures.empty();
  if (o.pass) {
    o.detail = "identical runs byte-equal (library and " + std::to_string(first.size()) +
               " CLI outputs); EVTS and model round trips exact; flip, truncation, magic and trailing-byte "
               "corruption rejected";
  } else {
    for (const auto& f : failures) o.detail += f + "; ";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // --quick skips the training experiments (AC5, AC6)
  const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
  using clock = std::chrono::steady_clock;
  int failed = 0;
  auto report = [&](const char* id, const std::function<Outcome()>& fn) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  };
  report("AC1", closed_form);
  report("AC2", monte_carlo);
  report("AC3", gradients);
  report("AC4", metric_oracles);
  if (!quick) {
    const Experiment ex = experiment();
    UdaResults r;
    double seconds = 0.0;
    report("AC5", [&] {
      r = run_uda(ex);
      seconds = r.seconds;
      return uda_directions(ex, r, seconds);
    });
    report("AC6", [&] {
      // the multiscale models are the AC5 ddc + evidential runs; only the flat baselines are new
      for (std::size_t seed = 0; seed < ex.seeds; ++seed) {
        const auto data = uda::make_data(ex.setup, seed, ex.strength);
        r.flat.push_back(uda::run_one(ex.setup, data, seed, AlignMethod::ddc, true, std::nullopt));
      }
      return multiscale_direction(ex, r);
    });
  }
  report("AC7", determinism);
  return failed == 0 ? 0 : 1;
}
