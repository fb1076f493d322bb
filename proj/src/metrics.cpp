#include "fan/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "fan/errors.hpp"
#include "json.hpp"

namespace fan {

std::set<Chunk> extract_chunks(const std::vector<std::string>& tags) {
  std::set<Chunk> chunks;
  bool open = false;
  Chunk current;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& tag = tags[i];
    if (!is_valid_tag(tag)) throw DataError("malformed slot tag '" + tag + "'");
    if (tag == "O") {
      if (open) chunks.insert(current);
      open = false;
      continue;
    }
    const std::string type = tag.substr(2);
    if (tag[0] == 'I' && open && current.type == type) {
      current.end = i;
      continue;
    }
    if (open) chunks.insert(current);
    current = {i, i, type};
    open = true;
  }
  if (open) chunks.insert(current);
  return chunks;
}

PrecisionRecall slot_f1(const std::vector<std::vector<std::string>>& gold,
                        const std::vector<std::vector<std::string>>& pred) {
  if (gold.size() != pred.size()) {
    throw DataError("slot_f1: " + std::to_string(gold.size()) + " gold sequences vs " +
                    std::to_string(pred.size()) + " predicted");
  }
  std::size_t matches = 0, n_gold = 0, n_pred = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) {
      throw DataError("slot_f1: sequence " + std::to_string(i) + " has " + std::to_string(gold[i].size()) +
                      " gold tags but " + std::to_string(pred[i].size()) + " predicted");
    }
    const auto g = extract_chunks(gold[i]);
    const auto p = extract_chunks(pred[i]);
    n_gold += g.size();
    n_pred += p.size();
    for (const auto& c : p) matches += g.count(c);
  }
  PrecisionRecall r;
  r.precision = n_pred ? static_cast<double>(matches) / static_cast<double>(n_pred) : 0.0;
  r.recall = n_gold ? static_cast<double>(matches) / static_cast<double>(n_gold) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

EvalReport evaluate(const std::vector<Prediction>& preds, const std::vector<Utterance>& golds) {
  if (preds.empty()) throw DataError("evaluate: no predictions");
  if (preds.size() != golds.size()) {
    throw DataError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(golds.size()) + " utterances");
  }
  EvalReport report;
  report.num_utterances = preds.size();

  std::set<std::string> label_set;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    label_set.insert(golds[i].intent);
    label_set.insert(preds[i].intent);
  }
  report.confusion_labels.assign(label_set.begin(), label_set.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < report.confusion_labels.size(); ++i) index[report.confusion_labels[i]] = i;
  report.intent_confusion.assign(index.size(), std::vector<std::size_t>(index.size(), 0));

  std::vector<std::vector<std::string>> gold_tags, pred_tags;
  std::size_t intent_ok = 0, frame_ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& g = golds[i];
    auto tags = preds[i].slots;
    if (tags.size() > g.slots.size()) {
      throw DataError("evaluate: prediction " + std::to_string(i) + " has more tags than tokens");
    }
    tags.resize(g.slots.size(), "O");
    const bool intent_match = preds[i].intent == g.intent;
    intent_ok += intent_match;
    frame_ok += intent_match && tags == g.slots;
    ++report.intent_confusion[index[g.intent]][index[preds[i].intent]];
    gold_tags.push_back(g.slots);
    pred_tags.push_back(std::move(tags));
  }
  const double n = static_cast<double>(preds.size());
  report.intent_accuracy = static_cast<double>(intent_ok) / n;
  report.semantic_accuracy = static_cast<double>(frame_ok) / n;
  const auto pr = slot_f1(gold_tags, pred_tags);
  report.slot_precision = pr.precision;
  report.slot_recall = pr.recall;
  report.slot_f1 = pr.f1;
  return report;
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string to_key_value(const EvalReport& r) {
  std::ostringstream out;
  out << "num_utterances=" << r.num_utterances << '\n'
      << "intent_accuracy=" << fixed(r.intent_accuracy) << '\n'
      << "slot_precision=" << fixed(r.slot_precision) << '\n'
      << "slot_recall=" << fixed(r.slot_recall) << '\n'
      << "slot_f1=" << fixed(r.slot_f1) << '\n'
      << "semantic_accuracy=" << fixed(r.semantic_accuracy) << '\n';
  return out.str();
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["num_utterances"] = r.num_utterances;
  j["intent_accuracy"] = r.intent_accuracy;
  j["slot_precision"] = r.slot_precision;
  j["slot_recall"] = r.slot_recall;
  j["slot_f1"] = r.slot_f1;
  j["semantic_accuracy"] = r.semantic_accuracy;
  j["confusion_labels"] = r.confusion_labels;
  j["intent_confusion"] = r.intent_confusion;
  return j.dump(2) + "\n";
}

std::string headline(const EvalReport& r) {
  std::ostringstream out;
  out << "Intent (Acc)  Slot (F1)  Sent (Acc)\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%12.1f  %9.1f  %10.1f\n", 100.0 * r.intent_accuracy, 100.0 * r.slot_f1,
                100.0 * r.semantic_accuracy);
  out << buf;
  return out.str();
}

}  // namespace fan
