#include "fan/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "fan/errors.hpp"

namespace fan {

namespace {

const std::vector<std::string> kReservedTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  // A trailing blank line is the file's final newline, not a record.
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string word;
  while (in >> word) out.push_back(std::move(word));
  return out;
}

std::string to_lower(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text;
}

bool is_valid_tag(const std::string& tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

std::vector<Utterance> load_split(const std::filesystem::path& dir, const LoadOptions& options) {
  const auto in_path = dir / "seq.in";
  const auto out_path = dir / "seq.out";
  const auto label_path = dir / "label";
  const auto tokens = read_lines(in_path);
  const auto tags = read_lines(out_path);
  const auto labels = read_lines(label_path);

  const std::size_t n = tokens.size();
  if (tags.size() != n) {
    throw ParseError(out_path.string(), std::min(n, tags.size()) + 1,
                     "line count " + std::to_string(tags.size()) + " differs from seq.in (" +
                         std::to_string(n) + ")");
  }
  if (labels.size() != n) {
    throw ParseError(label_path.string(), std::min(n, labels.size()) + 1,
                     "line count " + std::to_string(labels.size()) + " differs from seq.in (" +
                         std::to_string(n) + ")");
  }

  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    u.tokens = split_whitespace(tokens[i]);
    u.slots = split_whitespace(tags[i]);
    const auto intent = split_whitespace(labels[i]);
    if (u.tokens.empty()) throw ParseError(in_path.string(), i + 1, "empty utterance");
    if (u.tokens.size() != u.slots.size()) {
      throw ParseError(out_path.string(), i + 1,
                       std::to_string(u.slots.size()) + " slot tags for " +
                           std::to_string(u.tokens.size()) + " tokens");
    }
    if (intent.size() != 1) throw ParseError(label_path.string(), i + 1, "expected exactly one intent label");
    for (const auto& tag : u.slots) {
      if (!is_valid_tag(tag)) throw ParseError(out_path.string(), i + 1, "malformed slot tag '" + tag + "'");
    }
    if (options.lowercase) {
      for (auto& t : u.tokens) t = to_lower(std::move(t));
    }
    u.intent = intent.front();
    out.push_back(std::move(u));
  }
  return out;
}

void save_split(const std::filesystem::path& dir, const std::vector<Utterance>& utterances) {
  std::filesystem::create_directories(dir);
  std::ofstream in(dir / "seq.in", std::ios::binary);
  std::ofstream out(dir / "seq.out", std::ios::binary);
  std::ofstream label(dir / "label", std::ios::binary);
  if (!in || !out || !label) throw DataError("cannot write split to " + dir.string());
  auto join = [](const std::vector<std::string>& words) {
    std::string line;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) line += ' ';
      line += words[i];
    }
    return line;
  };
  for (const auto& u : utterances) {
    in << join(u.tokens) << '\n';
    out << join(u.slots) << '\n';
    label << u.intent << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : Vocab(kReservedTokens) {}

Vocab::Vocab(std::vector<std::string> tokens, std::size_t min_freq) : min_freq_(min_freq) {
  if (tokens.size() < kNumReserved) throw DataError("vocab is missing reserved tokens");
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (tokens[i] != kReservedTokens[i]) throw DataError("vocab reserved token " + std::to_string(i) + " is '" + tokens[i] + "'");
  }
  tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate vocab token '" + tokens_[i] + "'");
    }
  }
}

std::int32_t Vocab::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

Vocab build_vocab(const std::vector<Utterance>& train, std::size_t min_freq) {
  if (train.empty()) throw DataError("cannot build a vocabulary from an empty training set");
  if (min_freq == 0) throw ConfigError("min_freq must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& u : train) {
    for (const auto& t : u.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts) {
    if (count >= min_freq && std::find(kReservedTokens.begin(), kReservedTokens.end(), token) == kReservedTokens.end()) {
      ranked.emplace_back(token, count);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = kReservedTokens;
  for (auto& [token, count] : ranked) tokens.push_back(token);
  return Vocab(std::move(tokens), min_freq);
}

// ---------------------------------------------------------------------------
// LabelMaps

LabelMaps::LabelMaps(std::vector<std::string> intents, std::vector<std::string> slots)
    : intents_(std::move(intents)), slots_(std::move(slots)) {
  if (intents_.empty()) throw DataError("label maps need at least one intent");
  if (slots_.empty() || slots_.front() != "O") throw DataError("slot label 0 must be 'O'");
  for (std::size_t i = 0; i < intents_.size(); ++i) {
    if (!intent_ids_.emplace(intents_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate intent label '" + intents_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!slot_ids_.emplace(slots_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate slot label '" + slots_[i] + "'");
    }
  }
}

std::optional<std::int32_t> LabelMaps::intent_id(const std::string& label) const {
  const auto it = intent_ids_.find(label);
  if (it == intent_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::int32_t> LabelMaps::slot_id(const std::string& label) const {
  const auto it = slot_ids_.find(label);
  if (it == slot_ids_.end()) return std::nullopt;
  return it->second;
}

LabelMaps build_label_maps(const std::vector<Utterance>& train) {
  if (train.empty()) throw DataError("cannot build label maps from an empty training set");
  std::set<std::string> intents, slots;
  for (const auto& u : train) {
    intents.insert(u.intent);
    for (const auto& s : u.slots) {
      if (s != "O") slots.insert(s);
    }
  }
  std::vector<std::string> slot_list = {"O"};
  slot_list.insert(slot_list.end(), slots.begin(), slots.end());
  return LabelMaps({intents.begin(), intents.end()}, std::move(slot_list));
}

// ---------------------------------------------------------------------------
// Batches

namespace {

Batch frame(const std::vector<const std::vector<std::string>*>& token_lists, const Vocab& vocab,
            std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  if (token_lists.empty()) throw DataError("cannot encode an empty batch");
  Batch batch;
  batch.batch_size = token_lists.size();
  for (const auto* tokens : token_lists) {
    if (tokens->empty()) throw DataError("cannot encode an utterance with no tokens");
    const std::size_t len = std::min(tokens->size(), max_len);
    if (tokens->size() > max_len) ++batch.truncated;
    batch.lengths.push_back(len);
    batch.content_len = std::max(batch.content_len, len);
  }
  const std::size_t width = batch.seq_len();
  batch.token_ids.assign(batch.batch_size * width, Vocab::kPad);
  batch.attention_mask.assign(batch.batch_size * width, 0);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto& tokens = *token_lists[b];
    const std::size_t len = batch.lengths[b];
    std::int32_t* ids = batch.token_ids.data() + b * width;
    std::uint8_t* mask = batch.attention_mask.data() + b * width;
    ids[0] = Vocab::kCls;
    for (std::size_t t = 0; t < len; ++t) ids[t + 1] = vocab.id(tokens[t]);
    ids[len + 1] = Vocab::kSep;
    std::fill(mask, mask + len + 2, std::uint8_t{1});
  }
  return batch;
}

}  // namespace

Batch encode_batch(const std::vector<Utterance>& utts, const Vocab& vocab, const LabelMaps& labels,
                   std::size_t max_len, const EncodeOptions& options) {
  std::vector<const std::vector<std::string>*> token_lists;
  for (const auto& u : utts) {
    if (u.tokens.size() != u.slots.size()) throw DataError("utterance has mismatched token/slot counts");
    token_lists.push_back(&u.tokens);
  }
  Batch batch = frame(token_lists, vocab, max_len);
  const std::size_t width = batch.content_len;
  batch.gold_intents.resize(batch.batch_size);
  batch.gold_slots.assign(batch.batch_size * width, kIgnoreSlot);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto& u = utts[b];
    if (auto id = labels.intent_id(u.intent)) {
      batch.gold_intents[b] = *id;
    } else if (options.unknown_intent_as_first) {
      batch.gold_intents[b] = 0;
    } else {
      throw DataError("unknown intent label '" + u.intent + "'");
    }
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      if (auto id = labels.slot_id(u.slots[t])) {
        batch.gold_slots[b * width + t] = *id;
      } else if (options.unknown_slots_as_outside) {
        batch.gold_slots[b * width + t] = 0;
      } else {
        throw DataError("unknown slot label '" + u.slots[t] + "'");
      }
    }
  }
  return batch;
}

Batch encode_inputs(const std::vector<std::vector<std::string>>& token_lists, const Vocab& vocab,
                    std::size_t max_len) {
  std::vector<const std::vector<std::string>*> ptrs;
  for (const auto& t : token_lists) ptrs.push_back(&t);
  return frame(ptrs, vocab, max_len);
}

std::vector<Utterance> decode_batch(const Batch& batch, const Vocab& vocab, const LabelMaps& labels) {
  std::vector<Utterance> out(batch.batch_size);
  const std::size_t width = batch.seq_len();
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    auto& u = out[b];
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      u.tokens.push_back(vocab.token(batch.token_ids[b * width + t + 1]));
      if (batch.has_labels()) u.slots.push_back(labels.slot(batch.gold_slots[b * batch.content_len + t]));
    }
    if (batch.has_labels()) u.intent = labels.intent(batch.gold_intents[b]);
  }
  return out;
}

}  // namespace fan
