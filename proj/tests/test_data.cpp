#include <algorithm>

#include "doctest.h"
#include "fan/data.hpp"
#include "support/temp_dir.hpp"

using namespace fan;
using fan::testing::TempDir;
using fan::testing::write_file;

namespace {

void write_split(const std::filesystem::path& dir, const std::string& in, const std::string& out,
                 const std::string& label) {
  write_file(dir / "seq.in", in);
  write_file(dir / "seq.out", out);
  write_file(dir / "label", label);
}

Utterance utt(std::vector<std::string> tokens, std::string intent, std::vector<std::string> slots) {
  return {std::move(tokens), std::move(intent), std::move(slots)};
}

}  // namespace

TEST_CASE("load_split reads aligned files") {
  TempDir tmp;
  write_split(tmp.path(), "Find Fish Story\nwhat is the weather in boston\n",
              "O B-movie_name I-movie_name\nO O O O O B-city\n", "SearchScreeningEvent\nGetWeather\n");
  const auto utts = load_split(tmp.path());
  REQUIRE(utts.size() == 2);
  CHECK(utts[0].tokens == std::vector<std::string>{"find", "fish", "story"});
  CHECK(utts[0].intent == "SearchScreeningEvent");
  CHECK(utts[0].slots == std::vector<std::string>{"O", "B-movie_name", "I-movie_name"});
  CHECK(utts[1].slots.back() == "B-city");

  const auto cased = load_split(tmp.path(), {.lowercase = false});
  CHECK(cased[0].tokens.front() == "Find");
}

TEST_CASE("load_split accepts CRLF line endings") {
  TempDir tmp;
  write_split(tmp.path(), "a b\r\n", "O B-x\r\n", "i\r\n");
  const auto utts = load_split(tmp.path());
  REQUIRE(utts.size() == 1);
  CHECK(utts[0].slots.back() == "B-x");
  CHECK(utts[0].intent == "i");
}

TEST_CASE("load_split errors carry file and line") {
  TempDir tmp;
  SUBCASE("token and tag counts differ") {
    write_split(tmp.path(), "a b\nc d e\n", "O O\nO O\n", "x\ny\n");
    try {
      load_split(tmp.path());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(e.file().find("seq.out") != std::string::npos);
    }
  }
  SUBCASE("line counts differ") {
    write_split(tmp.path(), "a\nb\n", "O\nO\n", "x\n");
    CHECK_THROWS_AS(load_split(tmp.path()), ParseError);
  }
  SUBCASE("malformed tag") {
    write_split(tmp.path(), "a b\n", "O X-y\n", "x\n");
    try {
      load_split(tmp.path());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 1);
      CHECK(std::string(e.what()).find("X-y") != std::string::npos);
    }
  }
  SUBCASE("two intents on one line") {
    write_split(tmp.path(), "a\n", "O\n", "x y\n");
    CHECK_THROWS_AS(load_split(tmp.path()), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_split(tmp.path() / "nowhere"), DataError);
  }
}

TEST_CASE("tag well-formedness") {
  CHECK(is_valid_tag("O"));
  CHECK(is_valid_tag("B-city"));
  CHECK(is_valid_tag("I-x"));
  CHECK_FALSE(is_valid_tag("B-"));
  CHECK_FALSE(is_valid_tag("o"));
  CHECK_FALSE(is_valid_tag("E-city"));
}

TEST_CASE("save_split round trips") {
  TempDir tmp;
  const std::vector<Utterance> utts = {utt({"a", "b"}, "x", {"O", "B-t"}), utt({"c"}, "y", {"O"})};
  save_split(tmp.path(), utts);
  const auto back = load_split(tmp.path());
  REQUIRE(back.size() == 2);
  CHECK(back[0].tokens == utts[0].tokens);
  CHECK(back[0].slots == utts[0].slots);
  CHECK(back[1].intent == "y");
}

TEST_CASE("vocab reserved ids and frequency order") {
  const std::vector<Utterance> train = {utt({"b", "a", "c"}, "x", {"O", "O", "O"}),
                                        utt({"a", "c", "d"}, "x", {"O", "O", "O"}),
                                        utt({"a"}, "x", {"O"})};
  const auto vocab = build_vocab(train);
  CHECK(vocab.id("[PAD]") == 0);
  CHECK(vocab.id("[UNK]") == 1);
  CHECK(vocab.id("[CLS]") == 2);
  CHECK(vocab.id("[SEP]") == 3);
  // a:3, c:2, then b and d tie at 1 and sort lexicographically.
  CHECK(vocab.id("a") == 4);
  CHECK(vocab.id("c") == 5);
  CHECK(vocab.id("b") == 6);
  CHECK(vocab.id("d") == 7);
  CHECK(vocab.id("zebra") == Vocab::kUnk);
  CHECK(vocab.size() == 8);

  const auto pruned = build_vocab(train, 2);
  CHECK(pruned.size() == 6);
  CHECK(pruned.id("b") == Vocab::kUnk);

  CHECK_THROWS_AS(build_vocab({}), DataError);
  CHECK_THROWS_AS(build_vocab(train, 0), ConfigError);
  CHECK_THROWS_AS(Vocab({"[PAD]", "[UNK]"}), DataError);
  CHECK_THROWS_AS(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "a"}), DataError);
  CHECK(Vocab(vocab.tokens()) == vocab);
}

TEST_CASE("label maps sort intents and keep O first") {
  const std::vector<Utterance> train = {utt({"a", "b"}, "z", {"B-t", "I-t"}), utt({"c"}, "m", {"O"}),
                                        utt({"d"}, "a", {"B-s"})};
  const auto labels = build_label_maps(train);
  CHECK(labels.intents() == std::vector<std::string>{"a", "m", "z"});
  CHECK(labels.slots() == std::vector<std::string>{"O", "B-s", "B-t", "I-t"});
  CHECK(labels.slot_id("O") == 0);
  CHECK_FALSE(labels.intent_id("nope").has_value());
  CHECK_THROWS_AS(LabelMaps({"a"}, {"B-x", "O"}), DataError);
}

TEST_CASE("encode_batch frames with CLS and SEP and pads") {
  const std::vector<Utterance> train = {utt({"find", "fish", "story"}, "S", {"O", "B-m", "I-m"}),
                                        utt({"hi"}, "G", {"O"})};
  const auto vocab = build_vocab(train);
  const auto labels = build_label_maps(train);
  const auto batch = encode_batch(train, vocab, labels, 50);
  CHECK(batch.batch_size == 2);
  CHECK(batch.content_len == 3);
  CHECK(batch.seq_len() == 5);
  const std::vector<std::int32_t> row0 = {Vocab::kCls, vocab.id("find"), vocab.id("fish"), vocab.id("story"),
                                          Vocab::kSep};
  CHECK(std::equal(row0.begin(), row0.end(), batch.token_ids.begin()));
  const std::vector<std::int32_t> row1 = {Vocab::kCls, vocab.id("hi"), Vocab::kSep, Vocab::kPad, Vocab::kPad};
  CHECK(std::equal(row1.begin(), row1.end(), batch.token_ids.begin() + 5));
  CHECK(std::vector<std::uint8_t>(batch.attention_mask.begin() + 5, batch.attention_mask.end()) ==
        std::vector<std::uint8_t>{1, 1, 1, 0, 0});
  CHECK(batch.gold_slots == std::vector<std::int32_t>{0, *labels.slot_id("B-m"), *labels.slot_id("I-m"), 0,
                                                      kIgnoreSlot, kIgnoreSlot});
  CHECK(batch.gold_intents == std::vector<std::int32_t>{*labels.intent_id("S"), *labels.intent_id("G")});
  CHECK(batch.lengths == std::vector<std::size_t>{3, 1});

  const auto back = decode_batch(batch, vocab, labels);
  CHECK(back[0].tokens == train[0].tokens);
  CHECK(back[0].slots == train[0].slots);
  CHECK(back[1].intent == "G");
}

TEST_CASE("encode_batch truncates to max_len and maps OOV to UNK") {
  const std::vector<Utterance> train = {utt({"a", "b", "c", "d"}, "x", {"O", "B-t", "I-t", "O"})};
  const auto vocab = build_vocab(train);
  const auto labels = build_label_maps(train);
  const auto batch = encode_batch(train, vocab, labels, 2);
  CHECK(batch.content_len == 2);
  CHECK(batch.truncated == 1);
  CHECK(batch.token_ids.back() == Vocab::kSep);

  const auto inputs = encode_inputs({{"a", "unseen"}}, vocab, 10);
  CHECK(inputs.token_ids[2] == Vocab::kUnk);
  CHECK_FALSE(inputs.has_labels());
}

TEST_CASE("encode_batch rejects unknown labels unless asked to map them") {
  const std::vector<Utterance> train = {utt({"a"}, "x", {"B-t"})};
  const auto vocab = build_vocab(train);
  const auto labels = build_label_maps(train);
  const std::vector<Utterance> other = {utt({"a"}, "y", {"B-q"})};
  CHECK_THROWS_WITH_AS(encode_batch(other, vocab, labels, 5), "unknown intent label 'y'", DataError);
  const auto mapped = encode_batch(other, vocab, labels, 5, {true, true});
  CHECK(mapped.gold_intents[0] == 0);
  CHECK(mapped.gold_slots[0] == 0);
  CHECK_THROWS_AS(encode_batch({}, vocab, labels, 5), DataError);
  CHECK_THROWS_AS(encode_batch(train, vocab, labels, 0), ConfigError);
}

TEST_CASE("synthetic corpus is deterministic and contains the worked example") {
  const auto a = generate_synthetic_corpus();
  const auto b = generate_synthetic_corpus();
  REQUIRE(a.train.size() == 400);
  CHECK(a.valid.size() == 50);
  CHECK(a.test.size() == 50);
  CHECK(a.train[0].tokens == std::vector<std::string>{"find", "fish", "story"});
  CHECK(a.train[0].intent == "SearchScreeningEvent");
  CHECK(a.train[0].slots == std::vector<std::string>{"O", "B-movie_name", "I-movie_name"});
  bool same = true;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    same = same && a.train[i].tokens == b.train[i].tokens && a.train[i].slots == b.train[i].slots;
  }
  CHECK(same);
  bool well_formed = true;
  for (const auto& u : a.train) {
    well_formed = well_formed && u.tokens.size() == u.slots.size() &&
                  std::all_of(u.slots.begin(), u.slots.end(), is_valid_tag);
  }
  CHECK(well_formed);

  TempDir tmp;
  write_corpus(tmp.path(), a);
  CHECK(load_split(tmp / "test").size() == 50);
}
