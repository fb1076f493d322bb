#pragma once

// Brute-force chunk scorer kept deliberately independent of the library's
// left-to-right scanner: every span is tested against the chunk definition.

#include <string>
#include <tuple>
#include <vector>

namespace fan::testing {

using NaiveChunk = std::tuple<std::size_t, std::size_t, std::string>;

inline std::string tag_type(const std::string& tag) { return tag == "O" ? std::string() : tag.substr(2); }

inline std::vector<NaiveChunk> naive_chunks(const std::vector<std::string>& tags) {
  std::vector<NaiveChunk> out;
  const std::size_t n = tags.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (tags[i] == "O") continue;
    const std::string type = tag_type(tags[i]);
    const bool starts = tags[i][0] == 'B' || i == 0 || tag_type(tags[i - 1]) != type;
    if (!starts) continue;
    for (std::size_t j = i; j < n; ++j) {
      bool inside = true;
      for (std::size_t k = i + 1; k <= j; ++k) inside = inside && tags[k] == "I-" + type;
      const bool ends = j + 1 == n || tags[j + 1] != "I-" + type;
      if (inside && ends) out.emplace_back(i, j, type);
    }
  }
  return out;
}

struct NaiveScore {
  std::size_t matches = 0;
  std::size_t gold = 0;
  std::size_t pred = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline NaiveScore naive_slot_f1(const std::vector<std::vector<std::string>>& gold,
                                const std::vector<std::vector<std::string>>& pred) {
  NaiveScore s;
  for (std::size_t u = 0; u < gold.size(); ++u) {
    const auto g = naive_chunks(gold[u]);
    const auto p = naive_chunks(pred[u]);
    s.gold += g.size();
    s.pred += p.size();
    for (const auto& a : p) {
      for (const auto& b : g) s.matches += a == b;
    }
  }
  s.precision = s.pred ? static_cast<double>(s.matches) / static_cast<double>(s.pred) : 0.0;
  s.recall = s.gold ? static_cast<double>(s.matches) / static_cast<double>(s.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace fan::testing
