#include "fan/model_file.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fan {

namespace {

constexpr const char* kMagic = "FANM1";

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string shape_string(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

using Section = std::vector<std::string>;

bool is_section_header(const std::string& line) {
  static const std::set<std::string> names = {"[model]",  "[fan]",   "[train]",  "[vocab]",
                                              "[intents]", "[slots]", "[tensors]"};
  return names.count(line) != 0;
}

class Manifest {
 public:
  Manifest(const std::string& text, std::string source) : source_(std::move(source)) {
    std::istringstream in(text);
    std::string line;
    Section* current = nullptr;
    while (std::getline(in, line)) {
      if (is_section_header(line)) {
        current = &sections_[line.substr(1, line.size() - 2)];
      } else if (current) {
        current->push_back(line);
      } else if (!line.empty()) {
        fail("manifest", "content before the first section");
      }
    }
  }

  const Section& section(const std::string& name) const {
    const auto it = sections_.find(name);
    if (it == sections_.end()) fail("[" + name + "]", "missing section");
    return it->second;
  }

  std::string value(const std::string& section_name, const std::string& key) const {
    for (const auto& line : section(section_name)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos && line.compare(0, eq, key) == 0 && eq == key.size()) return line.substr(eq + 1);
    }
    fail(section_name + "." + key, "missing entry");
  }

  std::size_t size(const std::string& s, const std::string& key) const {
    const auto v = value(s, key);
    try {
      std::size_t pos = 0;
      const auto n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      fail(s + "." + key, "expected an unsigned integer, got '" + v + "'");
    }
  }

  double real(const std::string& s, const std::string& key) const {
    const auto v = value(s, key);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      fail(s + "." + key, "expected a number, got '" + v + "'");
    }
  }

  bool flag(const std::string& s, const std::string& key) const {
    const auto v = value(s, key);
    if (v != "0" && v != "1") fail(s + "." + key, "expected 0 or 1, got '" + v + "'");
    return v == "1";
  }

  [[noreturn]] void fail(const std::string& entry, const std::string& what) const {
    throw DataError("model file " + source_ + ": manifest entry " + entry + ": " + what);
  }

 private:
  std::string source_;
  std::map<std::string, Section> sections_;
};

struct TensorEntry {
  Shape shape;
  std::size_t offset = 0;
};

}  // namespace

NluModel bundle(const TrainResult& result, const TrainConfig& train_config) {
  return {result.model_config, train_config, result.vocab, result.labels, result.model};
}

std::string serialize_model(const NluModel& m) {
  const auto& e = m.config.encoder;
  const auto& f = m.config.fan;
  const auto& t = m.train;
  std::ostringstream man;
  man << "[model]\n"
      << "encoder_blocks=" << e.num_blocks << '\n'
      << "hidden=" << e.hidden << '\n'
      << "encoder_heads=" << e.heads << '\n'
      << "encoder_ffn_dim=" << e.ffn_dim << '\n'
      << "max_positions=" << e.max_positions << '\n'
      << "vocab_size=" << e.vocab_size << '\n'
      << "encoder_dropout=" << num(e.dropout) << '\n'
      << "activation=" << to_string(e.activation) << '\n'
      << "num_intents=" << m.config.num_intents << '\n'
      << "num_slots=" << m.config.num_slots << '\n'
      << "[fan]\n"
      << "heads=" << f.heads << '\n'
      << "ffn_dim=" << f.ffn_dim << '\n'
      << "use_label_attention=" << f.use_label_attention << '\n'
      << "use_mhsa=" << f.use_mhsa << '\n'
      << "use_ffn=" << f.use_ffn << '\n'
      << "scale_full_d=" << f.scale_full_d << '\n'
      << "dropout=" << num(f.dropout) << '\n'
      << "[train]\n"
      << "learning_rate=" << num(t.learning_rate) << '\n'
      << "batch_size=" << t.batch_size << '\n'
      << "max_epochs=" << t.max_epochs << '\n'
      << "lambda=" << num(t.lambda) << '\n'
      << "dropout=" << num(t.dropout) << '\n'
      << "max_len=" << t.max_len << '\n'
      << "seed=" << t.seed << '\n'
      << "patience=" << t.patience << '\n'
      << "beta1=" << num(t.beta1) << '\n'
      << "beta2=" << num(t.beta2) << '\n'
      << "epsilon=" << num(t.epsilon) << '\n'
      << "clip_norm=" << num(t.clip_norm) << '\n'
      << "min_freq=" << t.min_freq << '\n'
      << "[vocab]\n";
  for (const auto& tok : m.vocab.tokens()) man << tok << '\n';
  man << "[intents]\n";
  for (const auto& s : m.labels.intents()) man << s << '\n';
  man << "[slots]\n";
  for (const auto& s : m.labels.slots()) man << s << '\n';
  man << "[tensors]\n";

  std::map<std::string, const Tensor<float>*> tensors;
  visit_parameters(m.model, [&](const std::string& name, const Tensor<float>& tensor) { tensors[name] = &tensor; });
  std::size_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    check_finite<float>(tensor->values(), name);
    man << name << "\tf32\t" << shape_string(tensor->shape()) << '\t' << offset << '\n';
    offset += tensor->size() * sizeof(float);
  }

  const std::string manifest = man.str();
  std::string out = std::string(kMagic) + "\n" + std::to_string(manifest.size()) + "\n" + manifest;
  out.reserve(out.size() + offset);
  for (const auto& [name, tensor] : tensors) {
    for (float v : tensor->values()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      out.append(bytes, 4);
    }
  }
  return out;
}

NluModel parse_model(const std::string& bytes, const std::string& source) {
  auto fail = [&](const std::string& what) -> void { throw DataError("model file " + source + ": " + what); };
  const std::string magic_line = std::string(kMagic) + "\n";
  if (bytes.compare(0, magic_line.size(), magic_line) != 0) fail("bad magic (expected FANM1)");
  const auto len_end = bytes.find('\n', magic_line.size());
  if (len_end == std::string::npos) fail("truncated header");
  std::size_t manifest_len = 0;
  try {
    manifest_len = std::stoull(bytes.substr(magic_line.size(), len_end - magic_line.size()));
  } catch (const std::exception&) {
    fail("bad manifest length");
  }
  const std::size_t manifest_begin = len_end + 1;
  if (manifest_len > bytes.size() - manifest_begin) fail("manifest runs past end of file");
  const Manifest man(bytes.substr(manifest_begin, manifest_len), source);
  const std::size_t payload_begin = manifest_begin + manifest_len;
  const std::size_t payload_size = bytes.size() - payload_begin;

  NluModel out;
  auto& e = out.config.encoder;
  e.num_blocks = man.size("model", "encoder_blocks");
  e.hidden = man.size("model", "hidden");
  e.heads = man.size("model", "encoder_heads");
  e.ffn_dim = man.size("model", "encoder_ffn_dim");
  e.max_positions = man.size("model", "max_positions");
  e.vocab_size = man.size("model", "vocab_size");
  e.dropout = man.real("model", "encoder_dropout");
  try {
    e.activation = parse_activation(man.value("model", "activation"));
  } catch (const ConfigError& err) {
    man.fail("model.activation", err.what());
  }
  out.config.num_intents = man.size("model", "num_intents");
  out.config.num_slots = man.size("model", "num_slots");
  auto& f = out.config.fan;
  f.heads = man.size("fan", "heads");
  f.ffn_dim = man.size("fan", "ffn_dim");
  f.use_label_attention = man.flag("fan", "use_label_attention");
  f.use_mhsa = man.flag("fan", "use_mhsa");
  f.use_ffn = man.flag("fan", "use_ffn");
  f.scale_full_d = man.flag("fan", "scale_full_d");
  f.dropout = man.real("fan", "dropout");
  auto& t = out.train;
  t.learning_rate = man.real("train", "learning_rate");
  t.batch_size = man.size("train", "batch_size");
  t.max_epochs = man.size("train", "max_epochs");
  t.lambda = man.real("train", "lambda");
  t.dropout = man.real("train", "dropout");
  t.max_len = man.size("train", "max_len");
  t.seed = man.size("train", "seed");
  t.patience = man.size("train", "patience");
  t.beta1 = man.real("train", "beta1");
  t.beta2 = man.real("train", "beta2");
  t.epsilon = man.real("train", "epsilon");
  t.clip_norm = man.real("train", "clip_norm");
  t.min_freq = man.size("train", "min_freq");

  try {
    out.vocab = Vocab(man.section("vocab"), t.min_freq);
  } catch (const DataError& err) {
    man.fail("[vocab]", err.what());
  }
  if (out.vocab.size() != e.vocab_size) man.fail("model.vocab_size", "does not match [vocab] token count");
  try {
    out.labels = LabelMaps(man.section("intents"), man.section("slots"));
  } catch (const DataError& err) {
    man.fail("[intents]/[slots]", err.what());
  }
  if (out.labels.num_intents() != out.config.num_intents) man.fail("model.num_intents", "does not match [intents]");
  if (out.labels.num_slots() != out.config.num_slots) man.fail("model.num_slots", "does not match [slots]");
  try {
    out.config.validate();
  } catch (const ConfigError& err) {
    man.fail("[model]", err.what());
  }

  std::map<std::string, TensorEntry> entries;
  for (const auto& line : man.section("tensors")) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string name, dtype, shape_text, offset_text;
    if (!std::getline(in, name, '\t') || !std::getline(in, dtype, '\t') || !std::getline(in, shape_text, '\t') ||
        !std::getline(in, offset_text)) {
      man.fail("[tensors]", "malformed line '" + line + "'");
    }
    if (dtype != "f32") man.fail("tensor " + name, "unsupported dtype '" + dtype + "'");
    TensorEntry entry;
    try {
      std::size_t pos = 0;
      while (pos <= shape_text.size()) {
        const auto x = shape_text.find('x', pos);
        const auto part = shape_text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
        entry.shape.push_back(std::stoull(part));
        if (x == std::string::npos) break;
        pos = x + 1;
      }
      entry.offset = std::stoull(offset_text);
    } catch (const std::exception&) {
      man.fail("tensor " + name, "bad shape or offset");
    }
    if (!entries.emplace(name, entry).second) man.fail("tensor " + name, "listed twice");
  }

  Rng unused;
  out.model = init_model<float>(out.config, unused);
  std::size_t expected_offset = 0;
  std::map<std::string, Tensor<float>*> params;
  visit_parameters(out.model, [&](const std::string& name, Tensor<float>& tensor) { params[name] = &tensor; });
  for (const auto& [name, entry] : entries) {
    if (!params.count(name)) man.fail("tensor " + name, "not a parameter of this model configuration");
  }
  for (auto& [name, tensor] : params) {
    const auto it = entries.find(name);
    if (it == entries.end()) man.fail("tensor " + name, "missing from [tensors]");
    if (it->second.shape != tensor->shape()) {
      man.fail("tensor " + name, "shape " + shape_string(it->second.shape) + " but the configuration implies " +
                                     shape_string(tensor->shape()));
    }
    if (it->second.offset != expected_offset) man.fail("tensor " + name, "offset overlaps or leaves a gap");
    const std::size_t nbytes = tensor->size() * sizeof(float);
    if (expected_offset + nbytes > payload_size) man.fail("tensor " + name, "data runs past end of file");
    const char* src = bytes.data() + payload_begin + expected_offset;
    auto dst = tensor->data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, src + 4 * i, 4);
      dst[i] = std::bit_cast<float>(to_little(bits));
    }
    try {
      check_finite<float>(tensor->values(), name);
    } catch (const NumericError& err) {
      man.fail("tensor " + name, err.what());
    }
    expected_offset += nbytes;
  }
  if (expected_offset != payload_size) fail("payload has " + std::to_string(payload_size - expected_offset) +
                                            " trailing bytes");
  return out;
}

void save_model(const std::filesystem::path& path, const NluModel& model) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing model file " + path.string());
}

NluModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str(), path.string());
}

}  // namespace fan
