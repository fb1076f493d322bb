#include <array>
#include <string_view>

#include "fan/data.hpp"
#include "fan/rng.hpp"

namespace fan {

namespace {

struct SlotValues {
  std::string_view type;
  std::vector<std::string_view> values;
};

const std::vector<SlotValues>& slot_values() {
  static const std::vector<SlotValues> kValues = {
      {"movie_name",
       {"fish story", "the dark knight", "king of hearts", "on dress parade", "star wars", "the matrix",
        "gone girl", "blue velvet", "the lion king", "fish tank", "city lights", "heat"}},
      {"artist",
       {"miles davis", "adele", "the beatles", "john coltrane", "taylor swift", "bob dylan", "nina simone",
        "queen", "daft punk", "louis armstrong"}},
      {"music_item", {"song", "album", "track", "playlist", "record", "tune"}},
      {"city",
       {"boston", "new york", "san francisco", "paris", "tokyo", "chicago", "los angeles", "berlin",
        "madrid", "seattle"}},
      {"timeRange",
       {"tomorrow", "tonight", "in one hour", "next week", "this evening", "on friday", "right now",
        "at noon"}},
  };
  return kValues;
}

struct Template {
  std::string_view intent;
  // Words; "{type}" marks a slot placeholder.
  std::string_view text;
};

const std::vector<Template>& templates() {
  static const std::vector<Template> kTemplates = {
      {"SearchScreeningEvent", "find {movie_name}"},
      {"SearchScreeningEvent", "when is {movie_name} playing in {city}"},
      {"SearchScreeningEvent", "show me the schedule for {movie_name} {timeRange}"},
      {"SearchScreeningEvent", "where can i see {movie_name}"},
      {"SearchScreeningEvent", "find movie times for {movie_name} in {city}"},
      {"SearchScreeningEvent", "is {movie_name} showing {timeRange}"},
      {"PlayMusic", "play {music_item} by {artist}"},
      {"PlayMusic", "play some {artist}"},
      {"PlayMusic", "put on the {music_item} from {artist} {timeRange}"},
      {"PlayMusic", "i want to hear {artist}"},
      {"PlayMusic", "play the {music_item} {timeRange}"},
      {"PlayMusic", "find me a {music_item} by {artist}"},
      {"GetWeather", "what is the weather in {city} {timeRange}"},
      {"GetWeather", "will it rain in {city}"},
      {"GetWeather", "forecast for {city} {timeRange}"},
      {"GetWeather", "is it going to be cold {timeRange} in {city}"},
      {"GetWeather", "find the weather for {city}"},
      {"GetWeather", "how hot is it in {city} {timeRange}"},
  };
  return kTemplates;
}

Utterance instantiate(const Template& tpl, Rng& rng) {
  Utterance u;
  u.intent = std::string(tpl.intent);
  for (const auto& word : split_whitespace(std::string(tpl.text))) {
    if (word.front() != '{') {
      u.tokens.push_back(word);
      u.slots.push_back("O");
      continue;
    }
    const std::string type = word.substr(1, word.size() - 2);
    for (const auto& slot : slot_values()) {
      if (slot.type != type) continue;
      const auto value = slot.values[rng.below(slot.values.size())];
      const auto words = split_whitespace(std::string(value));
      for (std::size_t i = 0; i < words.size(); ++i) {
        u.tokens.push_back(words[i]);
        u.slots.push_back((i == 0 ? "B-" : "I-") + type);
      }
    }
  }
  return u;
}

std::vector<Utterance> sample(std::size_t n, Rng& rng) {
  std::vector<Utterance> out;
  out.reserve(n);
  const auto& tpls = templates();
  for (std::size_t i = 0; i < n; ++i) out.push_back(instantiate(tpls[rng.below(tpls.size())], rng));
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticOptions& options) {
  Rng rng(options.seed);
  SyntheticCorpus corpus;
  corpus.train = sample(options.train_size, rng);
  if (!corpus.train.empty()) {
    corpus.train.front() = Utterance{{"find", "fish", "story"},
                                     "SearchScreeningEvent",
                                     {"O", "B-movie_name", "I-movie_name"}};
  }
  corpus.valid = sample(options.valid_size, rng);
  corpus.test = sample(options.test_size, rng);
  return corpus;
}

void write_corpus(const std::filesystem::path& root, const SyntheticCorpus& corpus) {
  save_split(root / "train", corpus.train);
  save_split(root / "valid", corpus.valid);
  save_split(root / "test", corpus.test);
}

}  // namespace fan
