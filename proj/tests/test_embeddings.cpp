#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "mlnlu/embeddings.hpp"
#include "oracles.hpp"

using namespace mlnlu;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

double cosine(const Tensord& rows, Index a, Index b) {
  double dot = 0, na = 0, nb = 0;
  for (Index i = 0; i < rows.dim(1); ++i) {
    dot += rows(a, i) * rows(b, i);
    na += rows(a, i) * rows(a, i);
    nb += rows(b, i) * rows(b, i);
  }
  return dot / std::sqrt(na * nb);
}

Vocab words_from(const std::vector<std::string>& items) {
  Vocab v;
  v.add(kPadToken);
  v.add(kUnkToken);
  for (const auto& s : items) v.add(s);
  return v;
}

VocabularyBundle bundle_for(const Corpus& c) { return build_vocab(c); }

}  // namespace

TEST_CASE("load_aligned_vectors") {
  Vocab words = words_from({"alpha", "beta", "gamma"});

  SUBCASE("full coverage, exact values") {
    TempFile f("tmp_emb_full.vec");
    std::ofstream(f.path) << "3 4\n"
                          << "alpha 1 2 3 4\n"
                          << "beta 0.5 -0.25 0 1e-3\n"
                          << "gamma -1 -2 -3 -4\n";
    AlignedEmbeddingTable t = load_aligned_vectors(f.path, words, 4, 1);
    CHECK(t.coverage == 1.0);
    const Tensord& rows = t.rows.value();
    CHECK(rows(words.at("alpha"), 0) == 1.0);
    CHECK(rows(words.at("beta"), 1) == -0.25);
    CHECK(rows(words.at("beta"), 3) == 1e-3);
    CHECK(rows(words.at("gamma"), 3) == -4.0);
    // pad row all zero
    for (Index i = 0; i < 4; ++i) CHECK(rows(kPadIndex, i) == 0.0);
  }
  SUBCASE("empty overlap: coverage 0, random rows") {
    TempFile f("tmp_emb_none.vec");
    std::ofstream(f.path) << "1 4\nzzz 1 2 3 4\n";
    AlignedEmbeddingTable t = load_aligned_vectors(f.path, words, 4, 1);
    CHECK(t.coverage == 0.0);
    double norm = 0;
    for (Index i = 0; i < 4; ++i)
      norm += t.rows.value()(words.at("alpha"), i) * t.rows.value()(words.at("alpha"), i);
    CHECK(norm > 0.0);
  }
  SUBCASE("missing-word rows do not depend on file contents") {
    TempFile f1("tmp_emb_m1.vec"), f2("tmp_emb_m2.vec");
    std::ofstream(f1.path) << "1 4\nalpha 1 2 3 4\n";
    std::ofstream(f2.path) << "1 4\nbeta 9 9 9 9\n";
    AlignedEmbeddingTable t1 = load_aligned_vectors(f1.path, words, 4, 7);
    AlignedEmbeddingTable t2 = load_aligned_vectors(f2.path, words, 4, 7);
    const Index g = words.at("gamma");
    for (Index i = 0; i < 4; ++i)
      CHECK(t1.rows.value()(g, i) == t2.rows.value()(g, i));
  }
  SUBCASE("dimension mismatch is a config error") {
    TempFile f("tmp_emb_dim.vec");
    std::ofstream(f.path) << "1 5\nalpha 1 2 3 4 5\n";
    CHECK_THROWS_AS(load_aligned_vectors(f.path, words, 4, 1), ConfigError);
  }
  SUBCASE("malformed line reports its number") {
    TempFile f("tmp_emb_bad.vec");
    std::ofstream(f.path) << "2 4\nalpha 1 2 3 4\nbeta 1 2\n";
    try {
      load_aligned_vectors(f.path, words, 4, 1);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
  }
  SUBCASE("bad header") {
    TempFile f("tmp_emb_hdr.vec");
    std::ofstream(f.path) << "not a header\n";
    CHECK_THROWS_AS(load_aligned_vectors(f.path, words, 4, 1), ParseError);
  }
}

TEST_CASE("synthetic aligned vectors") {
  SynthResult r = gen_synthetic({"l1", "l2"}, 60, 29);
  // Vocab over both languages' full lexicons.
  Vocab words;
  words.add(kPadToken);
  words.add(kUnkToken);
  std::vector<std::string> sorted_tokens;
  for (const auto& [tok, lex] : r.lexemes) sorted_tokens.push_back(tok);
  std::sort(sorted_tokens.begin(), sorted_tokens.end());
  for (const auto& t : sorted_tokens) words.add(t);

  const Index dim = 64;
  AlignedEmbeddingTable table = make_synthetic_aligned(words, r.lexemes, dim, 3);

  // Group surface forms by lexeme id.
  std::map<Index, std::vector<Index>> by_lexeme;
  for (const auto& [tok, lex] : r.lexemes) by_lexeme[lex].push_back(words.at(tok));

  SUBCASE("translations of one lexeme: cosine > 0.99") {
    for (const auto& [lex, rows] : by_lexeme) {
      REQUIRE(rows.size() == 2);
      CHECK(cosine(table.rows.value(), rows[0], rows[1]) > 0.99);
    }
  }
  SUBCASE("noise bound: surface form within 5% of a shared base") {
    // Two translations t1 = b + n1, t2 = b + n2 with ||ni|| <= 0.05||b||
    // must satisfy ||t1 - t2|| <= 0.1 ||b|| <= (0.1/0.95) min(||t1||,||t2||).
    for (const auto& [lex, rows] : by_lexeme) {
      const Tensord& m = table.rows.value();
      double d2 = 0, n1 = 0, n2 = 0;
      for (Index i = 0; i < dim; ++i) {
        const double diff = m(rows[0], i) - m(rows[1], i);
        d2 += diff * diff;
        n1 += m(rows[0], i) * m(rows[0], i);
        n2 += m(rows[1], i) * m(rows[1], i);
      }
      CHECK(std::sqrt(d2) <= 0.1 / 0.95 * std::sqrt(std::min(n1, n2)) + 1e-12);
    }
  }
  SUBCASE("unrelated lexemes nearly orthogonal: |cos| < 0.3 for 95%") {
    Rng rng(5);
    int n_pairs = 0, n_small = 0;
    std::vector<Index> lex_ids;
    for (const auto& [lex, rows] : by_lexeme) lex_ids.push_back(lex);
    for (int rep = 0; rep < 2000; ++rep) {
      Index la = lex_ids[static_cast<std::size_t>(rng.below(lex_ids.size()))];
      Index lb = lex_ids[static_cast<std::size_t>(rng.below(lex_ids.size()))];
      if (la == lb) continue;
      ++n_pairs;
      if (std::fabs(cosine(table.rows.value(), by_lexeme[la][0], by_lexeme[lb][0])) < 0.3)
        ++n_small;
    }
    CHECK(static_cast<double>(n_small) / n_pairs >= 0.95);
  }
  SUBCASE("same seed gives identical tables; different seed differs") {
    AlignedEmbeddingTable t2 = make_synthetic_aligned(words, r.lexemes, dim, 3);
    CHECK(table.rows.value().bitwise_equal(t2.rows.value()));
    AlignedEmbeddingTable t3 = make_synthetic_aligned(words, r.lexemes, dim, 4);
    CHECK(!table.rows.value().bitwise_equal(t3.rows.value()));
  }
  SUBCASE("vec file round-trip reproduces the table rows exactly") {
    TempFile f("tmp_emb_synth.vec");
    write_synthetic_vec(f.path, r.lexemes, dim, 3);
    AlignedEmbeddingTable loaded = load_aligned_vectors(f.path, words, dim, 3);
    CHECK(loaded.coverage == 1.0);
    CHECK(loaded.rows.value().bitwise_equal(table.rows.value()));
  }
}

TEST_CASE("embed_tokens") {
  Corpus c{{"l1", {"play", "kora"}, "music", "play_song", {"O", "B-song"}},
           {"l1", {"mira", "kora", "vela"}, "music", "add_to_playlist",
            {"O", "B-song", "B-playlist"}}};
  VocabularyBundle vocab = bundle_for(c);
  EmbeddingConfig cfg;
  cfg.d_word = 8;
  cfg.d_char = 4;
  cfg.n_f = 2;

  Rng rng(11);
  Embedder emb;
  emb.config = cfg;
  Tensord wrows({vocab.words.size(), cfg.d_word});
  wrows.fill_xavier(rng);
  wrows.mat().row(kPadIndex).setZero();
  emb.word.rows = Var::leaf(std::move(wrows));
  emb.word.dim = cfg.d_word;
  emb.cnn = make_char_cnn(vocab.chars.size(), cfg, rng);

  auto ids_for = [&vocab](const std::vector<std::string>& toks) {
    std::pair<std::vector<Index>, std::vector<std::vector<Index>>> out;
    for (const auto& t : toks) {
      out.first.push_back(vocab.word_or_unk(t));
      out.second.push_back(token_char_ids(vocab, t));
    }
    return out;
  };

  SUBCASE("output width is d_word + 3 n_f; padded rows are zero") {
    auto [wids, cids] = ids_for({"play", "kora"});
    Var out = embed_tokens(emb, wids, cids, 5, Mode::Infer);
    CHECK(out.shape() == Shape{5, cfg.token_dim()});
    CHECK(cfg.token_dim() == 8 + 3 * 2);
    for (Index t = 2; t < 5; ++t)
      for (Index j = 0; j < cfg.token_dim(); ++j) CHECK(out.value()(t, j) == 0.0);
  }
  SUBCASE("deterministic in inference mode") {
    auto [wids, cids] = ids_for({"mira", "kora", "vela"});
    Var a = embed_tokens(emb, wids, cids, 3, Mode::Infer);
    Var b = embed_tokens(emb, wids, cids, 3, Mode::Infer);
    CHECK(a.value().bitwise_equal(b.value()));
  }
  SUBCASE("unknown word maps to the unk row") {
    auto [wids, cids] = ids_for({"zzznew"});
    CHECK(wids[0] == kUnkIndex);
    Var out = embed_tokens(emb, wids, cids, 1, Mode::Infer);
    for (Index j = 0; j < cfg.d_word; ++j)
      CHECK(out.value()(0, j) == emb.word.rows.value()(kUnkIndex, j));
  }
  SUBCASE("index out of range") {
    CHECK_THROWS_AS(
        embed_tokens(emb, {vocab.words.size()}, {{2}}, 1, Mode::Infer),
        IndexError);
  }
  SUBCASE("gradient wrt char CNN with frozen word table") {
    set_freeze(emb, true, EmbedScope::WordTable);
    auto [wids, cids] = ids_for({"play", "kora"});
    Tensord w({2, cfg.token_dim()});
    w.fill_uniform(rng, 0.5, 1.5);
    std::vector<Var> params{emb.cnn.char_table};
    for (const Var& f : emb.cnn.filters) params.push_back(f);
    for (const Var& b : emb.cnn.biases) params.push_back(b);
    auto res = oracles::fd_check(params, [&] {
      return sum(mul(embed_tokens(emb, wids, cids, 2, Mode::Train),
                     Var::constant(w)));
    });
    CHECK(res.max_rel_err < 1e-4);
    // frozen word table accumulated nothing
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum(mul(embed_tokens(emb, wids, cids, 2, Mode::Train),
                            Var::constant(w))));
    }
    CHECK(!emb.word.rows.grad().has_value());
    set_freeze(emb, false, EmbedScope::WordTable);
  }
  SUBCASE("freeze scoping") {
    set_freeze(emb, true, EmbedScope::WordTable);
    CHECK(emb.word.frozen());
    CHECK(emb.cnn.char_table.requires_grad());
    set_freeze(emb, true, EmbedScope::All);
    CHECK(!emb.cnn.char_table.requires_grad());
    set_freeze(emb, false, EmbedScope::All);
    CHECK(!emb.word.frozen());
  }
  SUBCASE("pad row never receives gradient through embedding") {
    auto [wids, cids] = ids_for({"play"});
    Tape tape;
    {
      TapeScope scope(tape);
      Var out = embed_tokens(emb, wids, cids, 4, Mode::Train);  // 3 pad rows
      tape.backward(sum(out));
    }
    REQUIRE(emb.word.rows.grad().has_value());
    for (Index j = 0; j < cfg.d_word; ++j)
      CHECK((*emb.word.rows.grad())(kPadIndex, j) == 0.0);
  }
}
