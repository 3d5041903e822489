#include "evuda/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "evuda/errors.hpp"
#include "evuda/ops.hpp"

namespace evuda {
namespace {

constexpr std::size_t kMaxDim = 0xffffffffu;

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

LabelBatch TimeSeriesBatch::label_batch() const {
  if (!labels) throw ContractError("batch carries no labels");
  return LabelBatch(*labels, classes);
}

TimeSeriesBatch TimeSeriesBatch::subset(std::span<const std::size_t> rows) const {
  const std::size_t row = channels() * length();
  TimeSeriesBatch out;
  out.classes = classes;
  std::vector<double> vals;
  vals.reserve(rows.size() * row);
  std::vector<int> labs;
  for (std::size_t r : rows) {
    if (r >= size()) throw ShapeError("subset row " + std::to_string(r) + " out of range");
    const auto begin = values.values().begin() + static_cast<std::ptrdiff_t>(r * row);
    vals.insert(vals.end(), begin, begin + static_cast<std::ptrdiff_t>(row));
    if (labels) labs.push_back((*labels)[r]);
  }
  out.values = Tensor(Shape{rows.size(), channels(), length()}, std::move(vals));
  if (labels) out.labels = std::move(labs);
  return out;
}

void TimeSeriesBatch::validate() const {
  if (values.rank() != 3) throw ShapeError("series batch must be [N,C,T], got " + shape_str(values.shape()));
  if (classes < 2) throw ConfigError("series batch must declare at least 2 classes");
  if (labels) {
    if (labels->size() != size()) throw ShapeError("label count does not match sample count");
    for (int l : *labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw DomainError("label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
      }
    }
  }
}

std::vector<std::uint8_t> serialize_evts(const TimeSeriesBatch& batch) {
  batch.validate();
  for (std::size_t d : {batch.size(), batch.channels(), batch.length(), batch.classes}) {
    if (d > kMaxDim) throw FormatError("EVTS dimensions must fit in 32 bits");
  }
  io::Writer w;
  w.bytes("EVTS", 4);
  w.put<std::uint32_t>(kEvtsVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.channels()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.length()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.classes));
  w.put<std::uint8_t>(batch.has_labels() ? 1 : 0);
  for (double v : batch.values.data()) w.put<float>(static_cast<float>(v));
  if (batch.labels)
    for (int l : *batch.labels) w.put<std::int32_t>(l);
  w.seal();
  return std::move(w.buffer());
}

TimeSeriesBatch deserialize_evts(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "EVTS file");
  r.expect_magic("EVTS");
  const auto version = r.get<std::uint32_t>();
  if (version != kEvtsVersion) {
    r.fail("unsupported format version " + std::to_string(version) + " (expected " + std::to_string(kEvtsVersion) + ")");
  }
  r.verify_checksum();
  const std::size_t n = r.get<std::uint32_t>(), c = r.get<std::uint32_t>(), t = r.get<std::uint32_t>();
  const std::size_t k = r.get<std::uint32_t>();
  const auto flag = r.get<std::uint8_t>();
  if (flag > 1) r.fail("invalid label flag " + std::to_string(flag));
  if (k < 2) r.fail("class count must be at least 2");
  const std::size_t count = n * c * t;
  if (c != 0 && t != 0 && count / c / t != n) r.fail("dimension product overflows");
  const std::size_t need = count * 4 + (flag ? n * 4 : 0);
  if (need != r.remaining()) {
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, header implies " + std::to_string(need));
  }
  std::vector<float> raw(count);
  r.bytes(raw.data(), count * sizeof(float));
  TimeSeriesBatch b;
  b.classes = k;
  b.values = Tensor(Shape{n, c, t}, std::vector<double>(raw.begin(), raw.end()));
  if (flag) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = r.offset();
      const auto l = r.get<std::int32_t>();
      if (l < 0 || static_cast<std::size_t>(l) >= k) {
        throw FormatError("EVTS file: label " + std::to_string(l) + " outside [0," + std::to_string(k) +
                          ") at byte offset " + std::to_string(at));
      }
      labels[i] = l;
    }
    b.labels = std::move(labels);
  }
  r.expect_end();
  return b;
}

void write_evts(const TimeSeriesBatch& batch, const std::string& path) { io::write_file(path, serialize_evts(batch)); }

TimeSeriesBatch read_evts(const std::string& path) { return deserialize_evts(io::read_file(path)); }

TimeSeriesBatch read_csv(const std::string& path, std::size_t channels, std::size_t length, std::size_t classes) {
  if (channels == 0 || length == 0) throw ConfigError("read_csv: channels and length must be positive");
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open '" + path + "' for reading");
  const std::size_t width = channels * length;
  std::vector<double> values;
  std::vector<int> labels;
  std::optional<bool> labeled;
  std::size_t rows = 0, line_no = 0;
  std::string line;
  auto fail = [&](const std::string& msg) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_commas(line);
    double first;
    if (rows == 0 && line_no == 1 && !parse_double(fields[0], first)) continue;  // header
    bool has_label;
    if (fields.size() == width) {
      has_label = false;
    } else if (fields.size() == width + 1) {
      has_label = true;
    } else {
      fail("expected " + std::to_string(width) + " values (plus optional label), found " +
           std::to_string(fields.size()) + " fields");
    }
    if (labeled && *labeled != has_label) fail("label column present on some rows but not others");
    labeled = has_label;
    for (std::size_t i = 0; i < width; ++i) {
      double v;
      if (!parse_double(fields[i], v)) fail("field " + std::to_string(i + 1) + " is not a number");
      if (!std::isfinite(v)) fail("field " + std::to_string(i + 1) + " is not finite");
      values.push_back(v);
    }
    if (has_label) {
      double l;
      if (!parse_double(fields[width], l) || l < 0 || l != std::floor(l) || l > 1e9) {
        fail("label is not a non-negative integer");
      }
      labels.push_back(static_cast<int>(l));
    }
    ++rows;
  }
  TimeSeriesBatch b;
  b.values = Tensor(Shape{rows, channels, length}, std::move(values));
  if (labeled.value_or(false)) {
    const int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    b.classes = classes ? classes : std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
    b.labels = std::move(labels);
  } else {
    b.classes = classes ? classes : 2;
  }
  b.validate();
  return b;
}

void write_csv(const TimeSeriesBatch& batch, const std::string& path) {
  batch.validate();
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot open '" + path + "' for writing");
  const std::size_t width = batch.channels() * batch.length();
  char buf[32];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, batch.values[i * width + j]);
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    if (batch.labels) out << ',' << (*batch.labels)[i];
    out << '\n';
  }
  if (!out) throw ResourceError("write to '" + path + "' failed");
}

SplitResult split(const TimeSeriesBatch& batch, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split fraction must lie in (0,1)");
  Rng rng(seed);
  SplitResult res;
  std::vector<std::size_t> train, test;
  auto take = [&](std::vector<std::size_t> idx, const std::string& what) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    if (idx.size() == 1) {
      n_train = 1;
      res.warnings.push_back(what + " has a single sample; it goes to the training split");
    }
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  };
  if (batch.labels) {
    std::vector<std::vector<std::size_t>> by_class(batch.classes);
    for (std::size_t i = 0; i < batch.size(); ++i) by_class[static_cast<std::size_t>((*batch.labels)[i])].push_back(i);
    for (std::size_t c = 0; c < batch.classes; ++c) {
      if (!by_class[c].empty()) take(by_class[c], "class " + std::to_string(c));
    }
  } else {
    std::vector<std::size_t> all(batch.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    take(all, "the batch");
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  res.train = batch.subset(train);
  res.test = batch.subset(test);
  return res;
}

std::vector<ClassTemplate> SynthSpec::default_templates(std::size_t classes) {
  std::vector<ClassTemplate> t;
  for (std::size_t c = 0; c < classes; ++c) {
    const double f1 = 3.0 + 3.0 * static_cast<double>(c);
    t.push_back({f1, 2.0 * f1 + 1.0, 1.0, 0.3 + 0.2 * static_cast<double>(c)});
  }
  return t;
}

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (channels == 0 || length == 0 || per_class == 0) throw ConfigError("synthetic data sizes must be positive");
  if (!templates.empty() && templates.size() != classes) throw ConfigError("one class template per class required");
  for (double v : {noise, amp_scale, target_noise, freq_offset}) {
    if (!std::isfinite(v)) throw ConfigError("synthetic shift parameters must be finite");
  }
  if (noise < 0 || target_noise < 0) throw ConfigError("noise levels must be non-negative");
}

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

TimeSeriesBatch synth_generate(const SynthSpec& spec, Domain domain) {
  spec.validate();
  const auto templates = spec.templates.empty() ? SynthSpec::default_templates(spec.classes) : spec.templates;
  const bool target = domain == Domain::target;
  const double amp = target ? spec.amp_scale : 1.0;
  const double df = target ? spec.freq_offset : 0.0;
  const double extra = target ? spec.target_noise : 0.0;

  const std::size_t n = spec.classes * spec.per_class, c = spec.channels, t = spec.length;
  Rng rng(spec.seed);
  // extra target noise comes from its own stream so the base realization
  // matches the source generator draw for draw
  Rng extra_rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);

  TimeSeriesBatch b;
  b.classes = spec.classes;
  b.values = Tensor(Shape{n, c, t});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % spec.classes;
    labels[i] = static_cast<int>(cls);
    const ClassTemplate& tp = templates[cls];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gain = 1.0 / (1.0 + 0.5 * static_cast<double>(ch));
      const double p1 = phase(rng), p2 = phase(rng);
      for (std::size_t s = 0; s < t; ++s) {
        const double x = static_cast<double>(s) / static_cast<double>(t);
        double v = amp * gain *
                   (tp.amp1 * std::sin(2.0 * std::numbers::pi * (tp.freq1 + df) * x + p1) +
                    tp.amp2 * std::sin(2.0 * std::numbers::pi * (tp.freq2 + df) * x + p2));
        v += spec.noise * normal(rng);
        if (extra > 0.0) v += extra * normal(extra_rng);
        b.values.at(i, ch, s) = static_cast<float>(v);
      }
    }
  }
  b.labels = std::move(labels);
  return b;
}

}  // namespace evuda
