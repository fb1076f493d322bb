#include "fan/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "fan/parallel.hpp"

namespace fan {

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

}  // namespace

LatencyReport summarize_timings(const std::string& model_name, const std::vector<double>& timings_ms,
                                std::size_t warmup_count) {
  if (timings_ms.empty()) throw DataError("no timings to summarize");
  LatencyReport r;
  r.model_name = model_name;
  r.num_utterances = timings_ms.size();
  r.warmup_count = warmup_count;
  r.threads = num_threads();
  double sum = 0.0;
  for (double t : timings_ms) sum += t;
  r.mean_ms = sum / static_cast<double>(timings_ms.size());
  double sq = 0.0;
  for (double t : timings_ms) sq += (t - r.mean_ms) * (t - r.mean_ms);
  r.std_ms = std::sqrt(sq / static_cast<double>(timings_ms.size()));
  auto sorted = timings_ms;
  std::sort(sorted.begin(), sorted.end());
  r.p50_ms = percentile(sorted, 0.50);
  r.p95_ms = percentile(sorted, 0.95);
  if (!(r.mean_ms > 0.0)) throw NumericError("mean latency is not positive");
  r.utterances_per_second = 1000.0 / r.mean_ms;
  return r;
}

LatencyReport measure(const std::string& model_name, const Model<float>& model, const Vocab& vocab,
                      const LabelMaps& labels, const std::vector<std::vector<std::string>>& utterances,
                      std::size_t max_len, std::size_t warmup, std::size_t repeats) {
  if (utterances.empty()) throw DataError("bench needs a non-empty test set");
  if (repeats == 0) throw ConfigError("repeats must be at least 1");
  Rng unused;
  auto run = [&](const std::vector<std::string>& tokens) {
    const Batch batch = encode_inputs({tokens}, vocab, max_len);
    return decode_predictions(forward(model, batch, false, unused), batch, labels);
  };
  for (std::size_t i = 0; i < warmup; ++i) run(utterances[i % utterances.size()]);

  using Clock = std::chrono::steady_clock;
  std::vector<double> timings;
  timings.reserve(utterances.size() * repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    for (const auto& tokens : utterances) {
      const auto start = Clock::now();
      const auto pred = run(tokens);
      const auto stop = Clock::now();
      if (pred.empty()) throw NumericError("bench produced no prediction");
      timings.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
  }
  return summarize_timings(model_name, timings, warmup);
}

std::string format_speedup(double baseline_ms, double model_ms) {
  if (!(baseline_ms > 0.0 && model_ms > 0.0)) throw ConfigError("latencies must be positive");
  return fmt("%.1fx", baseline_ms / model_ms);
}

std::vector<LatencyReport> compare(std::vector<LatencyReport> reports, const std::string& baseline_name) {
  const auto it = std::find_if(reports.begin(), reports.end(),
                               [&](const LatencyReport& r) { return r.model_name == baseline_name; });
  if (it == reports.end()) throw ConfigError("unknown baseline '" + baseline_name + "'");
  const double base = it->mean_ms;
  for (auto& r : reports) r.speedup_vs_baseline = base / r.mean_ms;
  return reports;
}

std::string format_table(const std::vector<LatencyReport>& reports) {
  const std::vector<std::string> header = {"Model", "Latency (ms)", "Speedup", "p50 (ms)", "p95 (ms)", "std (ms)",
                                           "utt/s"};
  std::vector<std::vector<std::string>> rows = {header};
  for (const auto& r : reports) {
    rows.push_back({r.model_name, fmt("%.3f", r.mean_ms),
                    r.speedup_vs_baseline ? fmt("%.1fx", *r.speedup_vs_baseline) : "-", fmt("%.3f", r.p50_ms),
                    fmt("%.3f", r.p95_ms), fmt("%.3f", r.std_ms), fmt("%.1f", r.utterances_per_second)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      out += c == 0 ? row[c] + pad : "  " + pad + row[c];
    }
    out += '\n';
  }
  return out;
}

std::string to_csv(const std::vector<LatencyReport>& reports) {
  std::string out = "model,num_utterances,warmup,threads,mean_ms,p50_ms,p95_ms,std_ms,utterances_per_second,speedup\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.3f,", r.model_name.c_str(),
                  r.num_utterances, r.warmup_count, r.threads, r.mean_ms, r.p50_ms, r.p95_ms, r.std_ms,
                  r.utterances_per_second);
    out += buf;
    if (r.speedup_vs_baseline) out += fmt("%.4f", *r.speedup_vs_baseline);
    out += '\n';
  }
  return out;
}

const std::vector<NamedShape>& named_shapes() {
  static const std::vector<NamedShape> shapes = {
      {"tiny", 4, 312, 12},
      {"distil", 6, 768, 12},
      {"bert", 12, 768, 12},
  };
  return shapes;
}

const NamedShape& named_shape(const std::string& name) {
  for (const auto& s : named_shapes()) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown model shape '" + name + "' (expected tiny, distil or bert)");
}

}  // namespace fan
