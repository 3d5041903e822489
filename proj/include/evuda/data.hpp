#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evuda/evidential.hpp"
#include "evuda/tensor.hpp"

namespace evuda {

/// Windows of a multichannel series, optionally labeled.
struct TimeSeriesBatch {
  Tensor values;  // [N,C,T]
  std::optional<std::vector<int>> labels;
  std::size_t classes = 0;

  std::size_t size() const { return values.rank() == 3 ? values.dim(0) : 0; }
  std::size_t channels() const { return values.dim(1); }
  std::size_t length() const { return values.dim(2); }
  bool has_labels() const { return labels.has_value(); }
  /// Throws ContractError when unlabeled.
  LabelBatch label_batch() const;
  /// Rows in the given order.
  TimeSeriesBatch subset(std::span<const std::size_t> rows) const;
  void validate() const;

  friend bool operator==(const TimeSeriesBatch&, const TimeSeriesBatch&) = default;
};

inline constexpr std::uint32_t kEvtsVersion = 1;

// EVTS container: 32-bit storage, so values are rounded to float on write.
std::vector<std::uint8_t> serialize_evts(const TimeSeriesBatch& batch);
TimeSeriesBatch deserialize_evts(std::span<const std::uint8_t> bytes);
void write_evts(const TimeSeriesBatch& batch, const std::string& path);
TimeSeriesBatch read_evts(const std::string& path);

/// Comma-separated rows of C*T values plus an optional integer label column;
/// an optional single header line is skipped. `classes` = 0 infers K as
/// max label + 1 (at least 2).
TimeSeriesBatch read_csv(const std::string& path, std::size_t channels, std::size_t length, std::size_t classes = 0);
void write_csv(const TimeSeriesBatch& batch, const std::string& path);

struct SplitResult {
  TimeSeriesBatch train;
  TimeSeriesBatch test;
  std::vector<std::string> warnings;
};

/// Seeded split; stratified by label when labels are present.
SplitResult split(const TimeSeriesBatch& batch, double train_fraction, std::uint64_t seed);

struct ClassTemplate {
  double freq1, freq2;  // cycles per window
  double amp1, amp2;
};

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t channels = 2;
  std::size_t length = 128;
  std::size_t per_class = 200;
  /// Empty means default_templates(classes).
  std::vector<ClassTemplate> templates;
  double noise = 0.3;
  double amp_scale = 1.0;     // target amplitude multiplier
  double target_noise = 0.0;  // extra Gaussian noise sigma on target
  double freq_offset = 0.0;   // cycles per window added to every target frequency
  std::uint64_t seed = 0;

  static std::vector<ClassTemplate> default_templates(std::size_t classes);
  void validate() const;
};

enum class Domain { source, target };

std::string_view to_string(Domain d);

/// Interleaved classes (sample i has class i mod K). Values are rounded to
/// float so they survive an EVTS round trip unchanged.
TimeSeriesBatch synth_generate(const SynthSpec& spec, Domain domain);

}  // namespace evuda
