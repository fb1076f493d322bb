#pragma once

// Small hand-built corpora and configurations used across test files.

#include <string>
#include <utility>
#include <vector>

#include "fan/data.hpp"
#include "fan/model.hpp"

namespace fan::testing {

/// Three utterances (lengths 5, 3 and 4), three intents, slot tags over two
/// types so the label set is exactly {O, B-a, I-a, B-b, I-b}.
inline std::vector<Utterance> tiny_corpus() {
  return {
      {{"book", "a", "flight", "to", "boston"}, "flight", {"O", "O", "B-a", "O", "B-b"}},
      {{"play", "some", "jazz"}, "music", {"O", "B-a", "I-a"}},
      {{"weather", "in", "new", "york"}, "weather", {"O", "O", "B-b", "I-b"}},
  };
}

struct TinySetup {
  std::vector<Utterance> utts;
  Vocab vocab;
  LabelMaps labels;
  Batch batch;
  ModelConfig config;
};

inline TinySetup tiny_setup(std::size_t hidden = 8, std::size_t heads = 2, std::size_t blocks = 1) {
  TinySetup s;
  s.utts = tiny_corpus();
  s.vocab = build_vocab(s.utts);
  s.labels = build_label_maps(s.utts);
  s.batch = encode_batch(s.utts, s.vocab, s.labels, 50);
  s.config.encoder.num_blocks = blocks;
  s.config.encoder.hidden = hidden;
  s.config.encoder.heads = heads;
  s.config.encoder.max_positions = 16;
  s.config.encoder.vocab_size = s.vocab.size();
  s.config.fan.heads = heads;
  s.config.num_intents = s.labels.num_intents();
  s.config.num_slots = s.labels.num_slots();
  return s;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_parameters(Model<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  visit_parameters(model, [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

/// Makes initial weights large enough that gradients are not all tiny.
template <typename T>
void scale_up_weights(Model<T>& model, Rng& rng, double stddev = 0.5) {
  visit_parameters(model, [&](const std::string&, Tensor<T>& t) {
    for (auto& v : t.data()) v = static_cast<T>(static_cast<double>(v) + stddev * rng.normal());
  });
}

}  // namespace fan::testing
