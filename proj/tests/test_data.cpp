#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mlnlu/data.hpp"
#include "mlnlu/synth.hpp"

using namespace mlnlu;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

AnnotatedUtterance make_utt(std::string lang, std::vector<std::string> tokens,
                            std::string domain, std::string intent,
                            std::vector<std::string> slots) {
  return AnnotatedUtterance{std::move(lang), std::move(tokens), std::move(domain),
                            std::move(intent), std::move(slots)};
}

Corpus flatten(const std::map<std::string, Corpus>& by_lang) {
  Corpus all;
  for (const auto& [lang, c] : by_lang) all.insert(all.end(), c.begin(), c.end());
  return all;
}

}  // namespace

TEST_CASE("utf8 helpers") {
  auto cps = utf8_codepoints("héllo");
  REQUIRE(cps.size() == 5);
  CHECK(cps[0] == 'h');
  CHECK(cps[1] == 0xE9);
  for (std::uint32_t cp : {0x24u, 0xE9u, 0x20ACu, 0x1F600u})
    CHECK(utf8_codepoints(codepoint_to_utf8(cp)) == std::vector<std::uint32_t>{cp});
  CHECK_THROWS_AS(utf8_codepoints("\xff"), ParseError);
  CHECK_THROWS_AS(utf8_codepoints("\xc3"), ParseError);  // truncated
}

TEST_CASE("utterance validation") {
  auto ok = make_utt("l1", {"play", "kora"}, "music", "play_song", {"O", "B-song"});
  CHECK_NOTHROW(validate_utterance(ok, ""));

  SUBCASE("length mismatch") {
    auto bad = ok;
    bad.slots.pop_back();
    CHECK_THROWS_AS(validate_utterance(bad, ""), ValidationError);
  }
  SUBCASE("I without B names the token index") {
    auto bad = make_utt("l1", {"a", "b"}, "d", "i", {"O", "I-Artist"});
    try {
      validate_utterance(bad, "");
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("index 1") != std::string::npos);
    }
  }
  SUBCASE("I after B of different type") {
    auto bad = make_utt("l1", {"a", "b"}, "d", "i", {"B-song", "I-artist"});
    CHECK_THROWS_AS(validate_utterance(bad, ""), ValidationError);
  }
  SUBCASE("I continues I of same type") {
    auto good = make_utt("l1", {"a", "b", "c"}, "d", "i",
                         {"B-song", "I-song", "I-song"});
    CHECK_NOTHROW(validate_utterance(good, ""));
  }
  SUBCASE("whitespace in token") {
    auto bad = make_utt("l1", {"two words"}, "d", "i", {"O"});
    CHECK_THROWS_AS(validate_utterance(bad, ""), ValidationError);
  }
  SUBCASE("malformed tag") {
    auto bad = make_utt("l1", {"a"}, "d", "i", {"X-song"});
    CHECK_THROWS_AS(validate_utterance(bad, ""), ValidationError);
  }
}

TEST_CASE("corpus file io") {
  SUBCASE("one valid record") {
    TempFile f("tmp_data_one.jsonl");
    std::ofstream(f.path)
        << "# a comment line\n"
        << "\n"
        << R"({"language":"l1","tokens":["play","kora"],"domain":"music",)"
        << R"("intent":"play_song","slots":["O","B-song"]})" << "\n";
    Corpus c = load_corpus(f.path);
    REQUIRE(c.size() == 1);
    CHECK(c[0].tokens == std::vector<std::string>{"play", "kora"});
    CHECK(c[0].intent == "play_song");
  }
  SUBCASE("slots shorter than tokens fails with line number") {
    TempFile f("tmp_data_short.jsonl");
    std::ofstream(f.path)
        << "# leading comment\n"
        << R"({"language":"l1","tokens":["a","b"],"domain":"d","intent":"i","slots":["O"]})"
        << "\n";
    try {
      load_corpus(f.path);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }
  SUBCASE("BIO violation in file") {
    TempFile f("tmp_data_bio.jsonl");
    std::ofstream(f.path)
        << R"({"language":"l1","tokens":["a","b"],"domain":"d","intent":"i","slots":["O","I-Artist"]})"
        << "\n";
    CHECK_THROWS_AS(load_corpus(f.path), ValidationError);
  }
  SUBCASE("malformed JSON line reports the line") {
    TempFile f("tmp_data_badjson.jsonl");
    std::ofstream(f.path) << "{not json\n";
    try {
      load_corpus(f.path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":1") != std::string::npos);
    }
  }
  SUBCASE("language filter") {
    TempFile f("tmp_data_lang.jsonl");
    std::ofstream(f.path)
        << R"({"language":"l9","tokens":["a"],"domain":"d","intent":"i","slots":["O"]})"
        << "\n";
    CHECK_THROWS_AS(load_corpus(f.path, std::set<std::string>{"l1"}), ValidationError);
    CHECK(load_corpus(f.path, std::set<std::string>{"l9"}).size() == 1);
  }
  SUBCASE("write then load preserves all records") {
    Corpus c{make_utt("l1", {"a", "b"}, "d1", "i1", {"O", "B-x"}),
             make_utt("l2", {"c"}, "d2", "i2", {"O"})};
    TempFile f("tmp_data_rt.jsonl");
    write_corpus(f.path, c);
    CHECK(load_corpus(f.path) == c);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_corpus("does_not_exist.jsonl"), ParseError);
  }
}

TEST_CASE("build_vocab") {
  Corpus one{make_utt("l1", {"play", "kora"}, "music", "PlayMusic", {"O", "B-song"})};
  Corpus two = one;
  two.push_back(one[0]);  // shares all tokens

  VocabularyBundle v1 = build_vocab(one);
  VocabularyBundle v2 = build_vocab(two);
  CHECK(v1.words.items() == v2.words.items());
  CHECK(v1.words.name(kPadIndex) == kPadToken);
  CHECK(v1.words.name(kUnkIndex) == kUnkToken);
  CHECK(v1.chars.name(0) == kPadToken);
  CHECK(v1.slot_labels.find("O").has_value());

  SUBCASE("intent count by hand") {
    Corpus c{make_utt("l1", {"a"}, "music", "PlayMusic", {"O"}),
             make_utt("l1", {"b"}, "weather", "GetWeather", {"O"}),
             make_utt("l1", {"c"}, "music", "PlayMusic", {"O"})};
    CHECK(build_vocab(c).intents.size() == 2);
  }
  SUBCASE("union over languages contains each language's inventory") {
    Corpus en{make_utt("en", {"play"}, "music", "PlayMusic", {"O"})};
    Corpus es{make_utt("es", {"pon"}, "music", "PonMusica", {"O"})};
    Corpus both = en;
    both.insert(both.end(), es.begin(), es.end());
    VocabularyBundle vu = build_vocab(both);
    VocabularyBundle ven = build_vocab(en);
    VocabularyBundle ves = build_vocab(es);
    for (const std::string& it : ven.intents.items())
      CHECK(vu.intents.find(it).has_value());
    for (const std::string& it : ves.intents.items())
      CHECK(vu.intents.find(it).has_value());
  }
  SUBCASE("empty corpus rejected") {
    CHECK_THROWS_AS(build_vocab(Corpus{}), ValidationError);
  }
  SUBCASE("unk fallback") {
    CHECK(v1.word_or_unk("never-seen") == kUnkIndex);
    CHECK(v1.word_or_unk("play") == v1.words.at("play"));
  }
}

TEST_CASE("split_train_valid") {
  Corpus c;
  for (int i = 0; i < 1000; ++i)
    c.push_back(make_utt("l1", {"tok" + std::to_string(i)}, "d", "i", {"O"}));

  auto [train, valid] = split_train_valid(c, 0.9, 7);
  CHECK(train.size() == 900);
  CHECK(valid.size() == 100);

  SUBCASE("determinism") {
    auto [t2, v2] = split_train_valid(c, 0.9, 7);
    CHECK(t2 == train);
    CHECK(v2 == valid);
    auto [t3, v3] = split_train_valid(c, 0.9, 8);
    CHECK(t3 != train);
  }
  SUBCASE("partition: union equals input multiset") {
    std::multiset<std::string> in, out;
    for (const auto& u : c) in.insert(u.tokens[0]);
    for (const auto& u : train) out.insert(u.tokens[0]);
    for (const auto& u : valid) out.insert(u.tokens[0]);
    CHECK(in == out);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(split_train_valid(c, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_train_valid(c, 1.0, 1), ConfigError);
    Corpus tiny{c[0]};
    CHECK_THROWS_AS(split_train_valid(tiny, 0.9, 1), ValidationError);
  }
}

TEST_CASE("make_batches") {
  Corpus c;
  Rng rng(3);
  for (int i = 0; i < 57; ++i) {
    std::vector<std::string> toks, slots;
    const int len = 1 + static_cast<int>(rng.below(12));
    for (int k = 0; k < len; ++k) {
      toks.push_back("t" + std::to_string(k));
      slots.push_back("O");
    }
    c.push_back(make_utt("l1", toks, "d", "i", slots));
  }

  SUBCASE("batch_size >= N gives a single batch") {
    auto batches = make_batches(c, 100, 1, false);
    REQUIRE(batches.size() == 1);
    CHECK(batches[0].utt_ids.size() == 57);
  }
  SUBCASE("conservation: every utterance exactly once") {
    for (bool bucket : {false, true}) {
      auto batches = make_batches(c, 8, 5, bucket);
      std::set<Index> seen;
      std::size_t total = 0;
      for (const Batch& b : batches) {
        total += b.utt_ids.size();
        for (Index id : b.utt_ids) seen.insert(id);
        for (Index id : b.utt_ids)
          CHECK(static_cast<Index>(c[static_cast<std::size_t>(id)].tokens.size()) <=
                b.max_len);
      }
      CHECK(total == c.size());
      CHECK(seen.size() == c.size());
    }
  }
  SUBCASE("bucketing never increases padding waste") {
    auto plain = make_batches(c, 8, 5, false);
    auto bucketed = make_batches(c, 8, 5, true);
    CHECK(padding_waste(c, bucketed) <= padding_waste(c, plain));
  }
  SUBCASE("bad batch size") {
    CHECK_THROWS_AS(make_batches(c, 0, 1, false), ConfigError);
  }
}

TEST_CASE("gen_synthetic") {
  SUBCASE("single language, 10 utterances, all valid") {
    SynthResult r = gen_synthetic({"l1"}, 10, 42);
    REQUIRE(r.train.at("l1").size() == 10);
    for (const auto& u : r.train.at("l1")) CHECK_NOTHROW(validate_utterance(u, ""));
    for (const auto& u : r.test.at("l1")) CHECK_NOTHROW(validate_utterance(u, ""));
  }
  SUBCASE("low resource scales train only") {
    SynthResult r = gen_synthetic({"l1", "l2"}, 500, 7, {{"l2", 0.1}});
    CHECK(r.train.at("l1").size() == 500);
    CHECK(r.train.at("l2").size() == 50);
    CHECK(r.test.at("l2").size() == r.test.at("l1").size());
  }
  SUBCASE("same seed gives byte-identical corpus files") {
    SynthResult a = gen_synthetic({"l1", "l2"}, 40, 9);
    SynthResult b = gen_synthetic({"l1", "l2"}, 40, 9);
    TempFile fa("tmp_synth_a.jsonl"), fb("tmp_synth_b.jsonl");
    write_corpus(fa.path, a.train.at("l2"));
    write_corpus(fb.path, b.train.at("l2"));
    CHECK(slurp(fa.path) == slurp(fb.path));
    SynthResult d = gen_synthetic({"l1", "l2"}, 40, 10);
    CHECK(d.train.at("l2") != a.train.at("l2"));
  }
  SUBCASE("languages have disjoint surface vocabularies") {
    SynthResult r = gen_synthetic({"l1", "l2", "l3"}, 60, 11);
    std::map<std::string, std::set<std::string>> toks;
    for (const auto& [lang, corpus] : r.train)
      for (const auto& u : corpus)
        toks[lang].insert(u.tokens.begin(), u.tokens.end());
    for (const std::string& t : toks["l1"]) {
      CHECK(!toks["l2"].count(t));
      CHECK(!toks["l3"].count(t));
    }
    for (const std::string& t : toks["l2"]) CHECK(!toks["l3"].count(t));
  }
  SUBCASE("lexeme map covers every generated token") {
    SynthResult r = gen_synthetic({"l1", "l2"}, 80, 13);
    for (const auto& [lang, corpus] : r.train)
      for (const auto& u : corpus)
        for (const std::string& t : u.tokens) CHECK(r.lexemes.count(t) == 1);
    CHECK(r.n_lexemes > 0);
    // Full lexicon: every language renders every lexeme.
    CHECK(static_cast<Index>(r.lexemes.size()) == 2 * r.n_lexemes);
  }
  SUBCASE("inventory meets the floor: 3 domains, 6 intents, 8 slot types") {
    const SynthInventory& inv = synth_inventory();
    CHECK(inv.domains.size() >= 3);
    CHECK(inv.intents.size() >= 6);
    CHECK(inv.slot_types.size() >= 8);
  }
  SUBCASE("lexicons are parallel: every lexeme has one surface per language") {
    SynthResult r = gen_synthetic({"l1", "l2", "l3"}, 30, 21);
    std::map<Index, int> translations;
    for (const auto& [tok, lex] : r.lexemes) ++translations[lex];
    CHECK(static_cast<Index>(translations.size()) == r.n_lexemes);
    for (const auto& [lex, n] : translations) CHECK(n == 3);
  }
  SUBCASE("invariants hold across seeds") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      SynthResult r = gen_synthetic({"l1", "l2"}, 50, seed);
      for (const auto& u : flatten(r.train)) CHECK_NOTHROW(validate_utterance(u, ""));
      for (const auto& u : flatten(r.test)) CHECK_NOTHROW(validate_utterance(u, ""));
    }
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(gen_synthetic({}, 10, 1), ConfigError);
    CHECK_THROWS_AS(gen_synthetic({"l1"}, 0, 1), ConfigError);
    CHECK_THROWS_AS(gen_synthetic({"l1", "l1"}, 10, 1), ConfigError);
    CHECK_THROWS_AS(gen_synthetic({"l1"}, 10, 1, {{"l2", 0.1}}), ConfigError);
    CHECK_THROWS_AS(gen_synthetic({"l1"}, 10, 1, {{"l1", 0.0}}), ConfigError);
  }
}

TEST_CASE("corpus_stats") {
  SUBCASE("hand-built counts") {
    Corpus train{
        make_utt("l1", {"a", "b"}, "music", "play", {"B-song", "O"}),
        make_utt("l1", {"c"}, "music", "pause", {"B-artist"}),
        make_utt("l2", {"d"}, "weather", "rain", {"O"}),
    };
    Corpus test{make_utt("l1", {"e"}, "music", "play", {"O"})};
    CorpusStats s = corpus_stats(train, test);
    REQUIRE(s.languages.size() == 2);
    CHECK(s.languages[0].language == "l1");
    CHECK(s.languages[0].utterances_train == 2);
    CHECK(s.languages[0].utterances_test == 1);
    CHECK(s.languages[0].intents == 2);
    CHECK(s.languages[0].slots == 2);
    CHECK(s.languages[1].language == "l2");
    CHECK(s.languages[1].slots == 0);
  }
  SUBCASE("empty corpus gives empty stats") {
    CHECK(corpus_stats({}).languages.empty());
  }
  SUBCASE("report schema round-trips large published-scale numbers") {
    CorpusStats s;
    s.languages.push_back({"en", 2121583, 117546, 316, 282});
    s.languages.push_back({"hi", 370465, 69024, 245, 180});
    CorpusStats back = stats_from_json(stats_to_json(s));
    CHECK(back == s);
    CHECK(stats_to_json(back) == stats_to_json(s));
  }
  SUBCASE("synthetic corpus stats match the generator inventory") {
    SynthResult r = gen_synthetic({"l1"}, 400, 5);
    REQUIRE(r.stats.languages.size() == 1);
    CHECK(r.stats.languages[0].utterances_train == 400);
    CHECK(r.stats.languages[0].intents ==
          static_cast<Index>(synth_inventory().intents.size()));
    CHECK(r.stats.languages[0].slots ==
          static_cast<Index>(synth_inventory().slot_types.size()));
  }
}

TEST_CASE("vocab round-trip stability through file io") {
  SynthResult r = gen_synthetic({"l1", "l2"}, 60, 17);
  Corpus c = flatten(r.train);
  TempFile f("tmp_data_vrt.jsonl");
  write_corpus(f.path, c);
  VocabularyBundle direct = build_vocab(c);
  VocabularyBundle loaded = build_vocab(load_corpus(f.path));
  CHECK(direct.words.items() == loaded.words.items());
  CHECK(direct.chars.items() == loaded.chars.items());
  CHECK(direct.domains.items() == loaded.domains.items());
  CHECK(direct.intents.items() == loaded.intents.items());
  CHECK(direct.slot_labels.items() == loaded.slot_labels.items());
}
