#pragma once

// Intent accuracy, chunk-level slot F1 and semantic frame accuracy.

#include <cstddef>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "fan/data.hpp"
#include "fan/decoder.hpp"

namespace fan {

struct Chunk {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::string type;

  auto operator<=>(const Chunk&) const = default;
};

/// BIO chunks with the lenient conlleval reading: an I-x after O, at the
/// start, or after a different type opens a new chunk.
std::set<Chunk> extract_chunks(const std::vector<std::string>& tags);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Micro-averaged exact chunk match. 0/0 counts as 0.
PrecisionRecall slot_f1(const std::vector<std::vector<std::string>>& gold,
                        const std::vector<std::vector<std::string>>& pred);

struct EvalReport {
  double intent_accuracy = 0.0;
  double slot_precision = 0.0;
  double slot_recall = 0.0;
  double slot_f1 = 0.0;
  double semantic_accuracy = 0.0;
  std::size_t num_utterances = 0;
  /// Row = gold, column = predicted; labels are the union of both sides.
  std::vector<std::string> confusion_labels;
  std::vector<std::vector<std::size_t>> intent_confusion;
};

/// Predictions shorter than the gold sequence (truncated inputs) are padded
/// with "O" before scoring.
EvalReport evaluate(const std::vector<Prediction>& preds, const std::vector<Utterance>& golds);

/// Flat key=value lines.
std::string to_key_value(const EvalReport& report);
/// JSON object with the same fields plus the confusion matrix.
std::string to_json(const EvalReport& report);
/// "Intent (Acc)  Slot (F1)  Sent (Acc)" with one-decimal percentages.
std::string headline(const EvalReport& report);

}  // namespace fan
