#include "fan/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fan {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda must be in (0,1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  if (min_freq == 0) throw ConfigError("min_freq must be at least 1");
}

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
               const AdamHyper& h) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adam_step: parameter has " + std::to_string(param.size()) + " values but gradient has " +
                     std::to_string(grad.size()) + " and moments " + std::to_string(m.size()) + "/" +
                     std::to_string(v.size()));
  }
  if (step == 0) throw ConfigError("adam_step: step count starts at 1");
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(step)));
  const T lr = static_cast<T>(h.learning_rate), eps = static_cast<T>(h.epsilon);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T m_hat = m[i] / c1;
    const T v_hat = v[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
void adam_update(Model<T>& model, AdamState<T>& state, const AdamHyper& hyper) {
  ++state.step;
  std::size_t i = 0;
  visit_parameters(model, [&](const std::string&, Tensor<T>& p) {
    if (state.m.size() <= i) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
    auto grad = p.grad();
    adam_step<T>(p.data(), grad, state.m[i], state.v[i], state.step, hyper);
    ++i;
  });
}

template <typename T>
double clip_gradients(Model<T>& model, double max_norm) {
  double sq = 0.0;
  visit_parameters(model, [&](const std::string&, Tensor<T>& p) {
    for (auto g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    visit_parameters(model, [&](const std::string&, Tensor<T>& p) {
      for (auto& g : p.grad()) g *= s;
    });
  }
  return norm;
}

EvalReport evaluate_model(const Model<float>& model, const Vocab& vocab, const LabelMaps& labels,
                          const std::vector<Utterance>& utts, std::size_t max_len) {
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(utts.size());
  for (const auto& u : utts) tokens.push_back(u.tokens);
  return evaluate(predict_tokens(model, vocab, labels, tokens, max_len), utts);
}

TrainResult train(const std::vector<Utterance>& train_set, const std::vector<Utterance>& valid_set,
                  ModelConfig model_config, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  TrainResult result;
  result.vocab = build_vocab(train_set, config.min_freq);
  result.labels = build_label_maps(train_set);
  model_config.encoder.vocab_size = result.vocab.size();
  model_config.encoder.dropout = config.dropout;
  model_config.fan.dropout = config.dropout;
  model_config.num_intents = result.labels.num_intents();
  model_config.num_slots = result.labels.num_slots();
  if (model_config.encoder.max_positions < config.max_len + 2) {
    throw ConfigError("max_positions " + std::to_string(model_config.encoder.max_positions) +
                      " cannot hold max_len " + std::to_string(config.max_len) + " plus framing");
  }
  result.model_config = model_config;

  Rng init_rng(config.seed);
  Rng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(config.seed ^ 0xd1b54a32d192ed03ULL);
  Model<float> model = init_model<float>(model_config, init_rng);
  AdamState<float> adam;
  const AdamHyper hyper{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  const auto& selection_set = valid_set.empty() ? train_set : valid_set;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_score = -1.0;
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<Utterance> items;
      for (std::size_t i = begin; i < end; ++i) items.push_back(train_set[order[i]]);
      const Batch batch = encode_batch(items, result.vocab, result.labels, config.max_len);

      ++step;
      zero_grads(model);
      const auto loss = loss_and_gradients(model, batch, config.lambda, true, dropout_rng);
      if (!std::isfinite(loss.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           " (intent " + std::to_string(loss.intent) + ", slot " + std::to_string(loss.slot) + ")");
      }
      if (!std::isfinite(clip_gradients(model, config.clip_norm))) {
        throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      }
      adam_update(model, adam, hyper);
      loss_sum += loss.total * static_cast<double>(items.size());
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train_set.size());
    record.valid = evaluate_model(model, result.vocab, result.labels, selection_set, config.max_len);
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    if (record.valid.semantic_accuracy > best_score) {
      best_score = record.valid.semantic_accuracy;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (config.patience && ++since_best >= config.patience) {
      break;
    }
  }
  visit_parameters(result.model, [](const std::string&, Tensor<float>& t) { t.drop_grad(); });
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_intent_acc,val_slot_f1,val_sem_acc\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.valid.intent_accuracy,
                  r.valid.slot_f1, r.valid.semantic_accuracy);
    out += buf;
  }
  return out;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << history_csv(history);
}

#define FAN_INSTANTIATE(T)                                                                                  \
  template void adam_step(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::uint64_t,      \
                          const AdamHyper&);                                                                \
  template void adam_update(Model<T>&, AdamState<T>&, const AdamHyper&);                                     \
  template double clip_gradients(Model<T>&, double);

FAN_INSTANTIATE(float)
FAN_INSTANTIATE(double)

#undef FAN_INSTANTIATE

}  // namespace fan
