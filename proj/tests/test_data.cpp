#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "evuda/alignment.hpp"
#include "evuda/data.hpp"
#include "evuda/errors.hpp"

using namespace evuda;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("evuda_test_" + name)).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.classes = 3;
  s.channels = 2;
  s.length = 32;
  s.per_class = 10;
  s.seed = seed;
  return s;
}

Tensor flatten(const TimeSeriesBatch& b) {
  return b.values.reshaped(Shape{b.size(), b.channels() * b.length()});
}

}  // namespace

TEST_CASE("EVTS round trip") {
  const std::string path = temp_path("rt.evts");
  TimeSeriesBatch b = synth_generate(small_spec(1), Domain::source);
  write_evts(b, path);
  CHECK(read_evts(path) == b);

  b.labels.reset();
  write_evts(b, path);
  const auto unlabeled = read_evts(path);
  CHECK_FALSE(unlabeled.has_labels());
  CHECK(unlabeled == b);
  std::remove(path.c_str());
}

TEST_CASE("EVTS stores 32-bit values") {
  TimeSeriesBatch b;
  b.classes = 2;
  b.values = Tensor(Shape{1, 1, 2}, {0.1, -3.5});
  b.labels = std::vector<int>{1};
  const auto back = deserialize_evts(serialize_evts(b));
  CHECK(back.values[0] == static_cast<double>(0.1f));
  CHECK(back.values[1] == -3.5);
  CHECK(serialize_evts(back) == serialize_evts(b));
  // header: magic, version, N, C, T, K, flag; payload: 2 floats, 1 label; crc
  CHECK(serialize_evts(b).size() == 4 + 4 * 5 + 1 + 8 + 4 + 4);
}

TEST_CASE("corrupted EVTS files are rejected") {
  const auto bytes = serialize_evts(synth_generate(small_spec(2), Domain::source));
  auto bad = bytes;
  bad[bad.size() - 1] ^= 0xff;
  CHECK_THROWS_WITH_AS(deserialize_evts(bad), doctest::Contains("checksum"), FormatError);
  bad = bytes;
  bad[40] ^= 0x01;
  CHECK_THROWS_WITH_AS(deserialize_evts(bad), doctest::Contains("byte offset"), FormatError);
  bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_evts(bad), doctest::Contains("magic"), FormatError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_WITH_AS(deserialize_evts(bad), doctest::Contains("version"), FormatError);
  CHECK_THROWS_AS(deserialize_evts(std::span(bytes).first(bytes.size() - 9)), FormatError);
  CHECK_THROWS_AS(deserialize_evts(std::span(bytes).first(3)), FormatError);
  CHECK_THROWS_AS(read_evts(temp_path("missing.evts")), ResourceError);
}

TEST_CASE("read_csv") {
  const std::string path = temp_path("in.csv");
  write_text(path, "a,b,c,d,label\n1,2,3,4,0\n5,6,7,8.5,1\n");
  auto b = read_csv(path, 1, 4);
  CHECK(b.size() == 2);
  REQUIRE(b.has_labels());
  CHECK(*b.labels == std::vector<int>{0, 1});
  CHECK(b.values == Tensor(Shape{2, 1, 4}, {1, 2, 3, 4, 5, 6, 7, 8.5}));
  CHECK(b.classes == 2);

  write_text(path, "1,2,3,4\n5,6,7,8\n");
  b = read_csv(path, 2, 2);
  CHECK(b.size() == 2);
  CHECK_FALSE(b.has_labels());
  CHECK(b.values.at(1, 1, 0) == 7);

  write_text(path, "1,2,3,4\n5,6,7\n");
  CHECK_THROWS_WITH_AS(read_csv(path, 1, 4), doctest::Contains(":2:"), ParseError);
  write_text(path, "1,2,3,4,0\n5,6,7,8\n");
  CHECK_THROWS_WITH_AS(read_csv(path, 1, 4), doctest::Contains(":2:"), ParseError);
  write_text(path, "1,2,x,4\n");
  CHECK_THROWS_AS(read_csv(path, 1, 4), ParseError);
  write_text(path, "1,2,3,4,1.5\n");
  CHECK_THROWS_AS(read_csv(path, 1, 4), ParseError);
  write_text(path, "1,2,3,4,5\n");
  CHECK(read_csv(path, 1, 4).classes == 6);
  CHECK_THROWS_AS(read_csv(path, 1, 4, 3), DomainError);
  std::remove(path.c_str());
}

TEST_CASE("CSV to EVTS to CSV keeps 32-bit values") {
  const std::string csv = temp_path("a.csv"), csv2 = temp_path("b.csv"), evts = temp_path("a.evts");
  const auto b = synth_generate(small_spec(3), Domain::target);
  write_csv(b, csv);
  const auto from_csv = read_csv(csv, b.channels(), b.length(), b.classes);
  CHECK(from_csv == b);
  write_evts(from_csv, evts);
  write_csv(read_evts(evts), csv2);
  CHECK(read_csv(csv2, b.channels(), b.length(), b.classes) == b);
  for (const auto& p : {csv, csv2, evts}) std::remove(p.c_str());
}

TEST_CASE("stratified split") {
  TimeSeriesBatch b;
  b.classes = 2;
  b.values = Tensor(Shape{100, 1, 1});
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < 100; ++i) {
    labels[i] = static_cast<int>(i % 2);
    b.values[i] = static_cast<double>(i);
  }
  b.labels = labels;
  const auto s = split(b, 0.7, 5);
  CHECK(s.train.size() == 70);
  CHECK(s.test.size() == 30);
  CHECK(std::count(s.train.labels->begin(), s.train.labels->end(), 0) == 35);
  CHECK(std::count(s.test.labels->begin(), s.test.labels->end(), 1) == 15);
  CHECK(s.warnings.empty());

  std::vector<double> all(s.train.values.values());
  all.insert(all.end(), s.test.values.values().begin(), s.test.values.values().end());
  std::sort(all.begin(), all.end());
  CHECK(all == b.values.values());

  const auto again = split(b, 0.7, 5);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK_FALSE(split(b, 0.7, 6).train == s.train);

  CHECK_THROWS_AS(split(b, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(b, 1.0, 1), ConfigError);
}

TEST_CASE("split keeps per-class proportions within one sample") {
  TimeSeriesBatch b;
  b.classes = 3;
  b.values = Tensor(Shape{37, 1, 1});
  std::vector<int> labels;
  const int counts[] = {20, 13, 4};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < counts[c]; ++i) labels.push_back(c);
  b.labels = labels;
  const auto s = split(b, 0.6, 9);
  for (int c = 0; c < 3; ++c) {
    const double got = static_cast<double>(std::count(s.train.labels->begin(), s.train.labels->end(), c));
    CHECK(std::abs(got - 0.6 * counts[c]) <= 1.0);
  }
}

TEST_CASE("split sends singleton classes to train with a warning") {
  TimeSeriesBatch b;
  b.classes = 2;
  b.values = Tensor(Shape{5, 1, 1});
  b.labels = std::vector<int>{0, 0, 0, 0, 1};
  const auto s = split(b, 0.5, 1);
  CHECK(std::count(s.train.labels->begin(), s.train.labels->end(), 1) == 1);
  REQUIRE(s.warnings.size() == 1);
  CHECK(s.warnings[0].find("class 1") != std::string::npos);

  b.labels.reset();
  CHECK(split(b, 0.6, 1).train.size() == 3);
}

TEST_CASE("synthetic generator") {
  const SynthSpec spec = small_spec(7);
  const auto src = synth_generate(spec, Domain::source);
  CHECK(src.size() == 30);
  for (int c = 0; c < 3; ++c) CHECK(std::count(src.labels->begin(), src.labels->end(), c) == 10);
  CHECK(synth_generate(spec, Domain::source) == src);
  // no shift: the target generator is the source generator
  CHECK(synth_generate(spec, Domain::target) == src);

  SynthSpec shifted = spec;
  shifted.amp_scale = 1.5;
  CHECK(synth_generate(shifted, Domain::source) == src);
  CHECK_FALSE(synth_generate(shifted, Domain::target) == src);
  shifted = spec;
  shifted.target_noise = 0.2;
  CHECK_FALSE(synth_generate(shifted, Domain::target) == src);

  SynthSpec bad = spec;
  bad.amp_scale = NAN;
  CHECK_THROWS_AS(synth_generate(bad, Domain::source), ConfigError);
  bad = spec;
  bad.templates.resize(2);
  CHECK_THROWS_AS(synth_generate(bad, Domain::source), ConfigError);
}

TEST_CASE("raw-window discrepancy grows with amplitude shift") {
  const double scales[] = {1.0, 1.5, 2.0};
  double mean[3] = {0, 0, 0};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec;
    spec.classes = 4;
    spec.channels = 2;
    spec.length = 64;
    spec.per_class = 15;
    spec.seed = 100 + seed;
    const Tensor src = flatten(synth_generate(spec, Domain::source));
    for (int i = 0; i < 3; ++i) {
      SynthSpec t = spec;
      t.seed = 5000 + seed;
      t.amp_scale = scales[i];
      const Tensor tgt = flatten(synth_generate(t, Domain::target));
      mean[i] += mmd_rbf(src, tgt, median_bandwidths(src, tgt)) / 10.0;
    }
  }
  CHECK(mean[0] < mean[1]);
  CHECK(mean[1] < mean[2]);
}
