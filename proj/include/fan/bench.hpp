#pragma once

// Per-utterance inference latency measurement and speedup reporting.
//
// Timed region per utterance: framing of the single utterance into a batch,
// the forward pass and argmax decoding. Corpus loading and whitespace
// tokenization happen before timing starts.

#include <optional>
#include <string>
#include <vector>

#include "fan/data.hpp"
#include "fan/model.hpp"

namespace fan {

struct LatencyReport {
  std::string model_name;
  std::size_t num_utterances = 0;  // timed forward passes
  std::size_t warmup_count = 0;
  std::size_t threads = 1;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double std_ms = 0.0;
  double utterances_per_second = 0.0;
  std::optional<double> speedup_vs_baseline;
};

/// Statistics over per-utterance timings in milliseconds. Percentiles use
/// linear interpolation between order statistics; std is the population form.
LatencyReport summarize_timings(const std::string& model_name, const std::vector<double>& timings_ms,
                                std::size_t warmup_count);

/// Runs `warmup` untimed predictions (cycling through the set), then
/// `repeats` timed passes over every utterance one at a time.
LatencyReport measure(const std::string& model_name, const Model<float>& model, const Vocab& vocab,
                      const LabelMaps& labels, const std::vector<std::vector<std::string>>& utterances,
                      std::size_t max_len, std::size_t warmup, std::size_t repeats);

/// "%.1fx" of baseline_ms / model_ms.
std::string format_speedup(double baseline_ms, double model_ms);

/// Fills speedup_vs_baseline for every report relative to `baseline_name`.
std::vector<LatencyReport> compare(std::vector<LatencyReport> reports, const std::string& baseline_name);

/// Aligned text table: Model, Latency (ms), Speedup, p50, p95, std, utt/s.
std::string format_table(const std::vector<LatencyReport>& reports);
std::string to_csv(const std::vector<LatencyReport>& reports);

struct NamedShape {
  std::string name;
  std::size_t blocks;
  std::size_t hidden;
  std::size_t heads;
};

/// Tiny (4/312/12), Distil (6/768/12) and BERT (12/768/12) encoder shapes.
const std::vector<NamedShape>& named_shapes();
const NamedShape& named_shape(const std::string& name);

}  // namespace fan
