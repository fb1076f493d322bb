#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fan/errors.hpp"

namespace fan {

struct Utterance {
  std::vector<std::string> tokens;
  std::string intent;
  /// One BIO tag per token.
  std::vector<std::string> slots;
};

struct LoadOptions {
  bool lowercase = true;
};

/// Reads `seq.in`, `seq.out` and `label` from `dir`. Accepts LF or CRLF.
/// Throws ParseError naming the file and line on any misalignment.
std::vector<Utterance> load_split(const std::filesystem::path& dir, const LoadOptions& options = {});

/// Writes the three-file layout read by `load_split`.
void save_split(const std::filesystem::path& dir, const std::vector<Utterance>& utterances);

/// True for "O", "B-x" and "I-x" with a non-empty type.
bool is_valid_tag(const std::string& tag);

std::vector<std::string> split_whitespace(const std::string& line);
std::string to_lower(std::string text);

class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::size_t kNumReserved = 4;

  Vocab();
  /// Reconstructs a vocab from its id-ordered token list (reserved names first).
  explicit Vocab(std::vector<std::string> tokens, std::size_t min_freq = 1);

  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  std::size_t min_freq() const { return min_freq_; }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::size_t min_freq_ = 1;
};

/// Ids ordered by descending frequency, ties broken lexicographically;
/// tokens seen fewer than `min_freq` times are left out (encode to UNK).
Vocab build_vocab(const std::vector<Utterance>& train, std::size_t min_freq = 1);

/// Bijective label ↔ id tables for intents and slot tags.
class LabelMaps {
 public:
  LabelMaps() = default;
  /// `slots` must start with "O".
  LabelMaps(std::vector<std::string> intents, std::vector<std::string> slots);

  std::size_t num_intents() const { return intents_.size(); }
  std::size_t num_slots() const { return slots_.size(); }

  std::optional<std::int32_t> intent_id(const std::string& label) const;
  std::optional<std::int32_t> slot_id(const std::string& label) const;
  const std::string& intent(std::int32_t id) const { return intents_.at(static_cast<std::size_t>(id)); }
  const std::string& slot(std::int32_t id) const { return slots_.at(static_cast<std::size_t>(id)); }

  const std::vector<std::string>& intents() const { return intents_; }
  const std::vector<std::string>& slots() const { return slots_; }

  bool operator==(const LabelMaps& other) const {
    return intents_ == other.intents_ && slots_ == other.slots_;
  }

 private:
  std::vector<std::string> intents_;
  std::vector<std::string> slots_;
  std::map<std::string, std::int32_t> intent_ids_;
  std::map<std::string, std::int32_t> slot_ids_;
};

/// Intents sorted lexicographically; slot id 0 is "O", the rest sorted.
LabelMaps build_label_maps(const std::vector<Utterance>& train);

/// Gold slot id at padded/truncated content positions.
inline constexpr std::int32_t kIgnoreSlot = -1;

/// Padded, framed mini-batch: [CLS] w1..wT [SEP] PAD...
struct Batch {
  std::size_t batch_size = 0;
  /// Content width L; framed width is L + 2.
  std::size_t content_len = 0;
  std::vector<std::int32_t> token_ids;       // B × (L+2)
  std::vector<std::uint8_t> attention_mask;  // B × (L+2)
  std::vector<std::int32_t> gold_intents;    // B, empty without labels
  std::vector<std::int32_t> gold_slots;      // B × L, kIgnoreSlot at t >= lengths[b]
  std::vector<std::size_t> lengths;          // B
  /// Utterances cut down to max_len while encoding.
  std::size_t truncated = 0;

  std::size_t seq_len() const { return content_len + 2; }
  bool has_labels() const { return !gold_intents.empty(); }
};

struct EncodeOptions {
  /// Map slot tags missing from the label maps to "O" instead of failing.
  bool unknown_slots_as_outside = false;
  /// Map intents missing from the label maps to id 0 instead of failing.
  bool unknown_intent_as_first = false;
};

/// Frames and pads utterances with gold labels. Throws DataError naming any
/// intent or slot label absent from `labels`.
Batch encode_batch(const std::vector<Utterance>& utts, const Vocab& vocab, const LabelMaps& labels,
                   std::size_t max_len, const EncodeOptions& options = {});

/// Frames and pads token sequences for inference (no gold fields).
Batch encode_inputs(const std::vector<std::vector<std::string>>& token_lists, const Vocab& vocab,
                    std::size_t max_len);

/// Strips framing and maps ids back to text. Out-of-vocabulary tokens come
/// back as the UNK name.
std::vector<Utterance> decode_batch(const Batch& batch, const Vocab& vocab, const LabelMaps& labels);

// ---------------------------------------------------------------------------
// Synthetic corpus.

struct SyntheticCorpus {
  std::vector<Utterance> train;
  std::vector<Utterance> valid;
  std::vector<Utterance> test;
};

struct SyntheticOptions {
  std::uint64_t seed = 20220101;
  std::size_t train_size = 400;
  std::size_t valid_size = 50;
  std::size_t test_size = 50;
};

/// Deterministic small-grammar corpus: 3 intents, 5 slot types. The first
/// training utterance is always "find fish story".
SyntheticCorpus generate_synthetic_corpus(const SyntheticOptions& options = {});

/// Writes `<root>/{train,valid,test}/{seq.in,seq.out,label}`.
void write_corpus(const std::filesystem::path& root, const SyntheticCorpus& corpus);

}  // namespace fan
