#pragma once

// Single-file model format:
//
//   FANM1\n
//   <manifest byte length>\n
//   <manifest: [model] [fan] [train] [vocab] [intents] [slots] [tensors]>
//   <payload: little-endian float32 tensors, lexicographic by name>
//
// Each [tensors] line is "name<TAB>f32<TAB>AxBxC<TAB>byte offset into payload".

#include <filesystem>
#include <string>

#include "fan/data.hpp"
#include "fan/model.hpp"
#include "fan/trainer.hpp"

namespace fan {

struct NluModel {
  ModelConfig config;
  TrainConfig train;
  Vocab vocab;
  LabelMaps labels;
  Model<float> model;
};

NluModel bundle(const TrainResult& result, const TrainConfig& train_config);

std::string serialize_model(const NluModel& model);
/// `source` names the input in error messages.
NluModel parse_model(const std::string& bytes, const std::string& source = "<memory>");

void save_model(const std::filesystem::path& path, const NluModel& model);
NluModel load_model(const std::filesystem::path& path);

}  // namespace fan
