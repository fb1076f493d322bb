#pragma once

// Adam training loop with validation-based checkpoint selection.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fan/data.hpp"
#include "fan/metrics.hpp"
#include "fan/model.hpp"

namespace fan {

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  double lambda = 0.5;
  /// Copied into the encoder and FAN dropout rates by train().
  double dropout = 0.1;
  std::size_t max_len = 50;
  std::uint64_t seed = 1;
  /// Epochs without a validation improvement before stopping; 0 never stops early.
  std::size_t patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm ceiling; 0 disables clipping.
  double clip_norm = 1.0;
  std::size_t min_freq = 1;

  void validate() const;
};

struct AdamHyper {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of a single parameter array. `step` is the
/// 1-based update count after incrementing.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
               const AdamHyper& hyper);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

/// Applies adam_step to every model parameter using its grad slot.
template <typename T>
void adam_update(Model<T>& model, AdamState<T>& state, const AdamHyper& hyper);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_gradients(Model<T>& model, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  EvalReport valid;
};

struct TrainResult {
  ModelConfig model_config;
  Vocab vocab;
  LabelMaps labels;
  Model<float> model;  // best checkpoint
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Builds the vocabulary and label maps from `train_set`, then trains.
/// `model_config` supplies the architecture; its vocabulary and label sizes
/// are filled in. An empty `valid_set` selects on the training set instead.
TrainResult train(const std::vector<Utterance>& train_set, const std::vector<Utterance>& valid_set,
                  ModelConfig model_config, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Evaluates a model on labelled utterances (tokens truncated to max_len).
EvalReport evaluate_model(const Model<float>& model, const Vocab& vocab, const LabelMaps& labels,
                          const std::vector<Utterance>& utts, std::size_t max_len);

std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace fan
