#pragma once

#include <string>
#include <vector>

#include "mlnlu/autodiff.hpp"
#include "mlnlu/data.hpp"
#include "mlnlu/synth.hpp"

namespace mlnlu {

struct EmbeddingConfig {
  Index d_word = 64;
  Index d_char = 16;
  Index n_f = 16;                      // filters per bank
  std::vector<Index> widths = {2, 3, 4};  // one bank per width

  Index char_out_dim() const { return static_cast<Index>(widths.size()) * n_f; }
  Index token_dim() const { return d_word + char_out_dim(); }
};

/// Word-vector table in a shared multilingual space. Row 0 (pad) is all-zero
/// and structurally never receives gradient (padding bypasses the lookup).
struct AlignedEmbeddingTable {
  Var rows;  // {|words|, dim}
  Index dim = 0;
  std::string source;      // input digest, "random", or "synthetic"
  double coverage = 0.0;   // fraction of vocab found in the source

  bool frozen() const { return !rows.requires_grad(); }
};

/// Character CNN: one convolution bank per filter width, max-pooled over the
/// token's codepoints and concatenated.
struct CharCnn {
  Var char_table;            // {|chars|, d_char}
  std::vector<Var> filters;  // per bank: {n_f, width, d_char}
  std::vector<Var> biases;   // per bank: {n_f}
  Index out_dim = 0;
};

struct Embedder {
  AlignedEmbeddingTable word;
  CharCnn cnn;
  EmbeddingConfig config;
};

enum class EmbedScope { WordTable, CharCnn, All };

/// Reads a ".vec" text file (header "N D", lines "token v1 .. vD"). Rows for
/// vocab words found in the file are copied exactly; missing words draw from
/// N(0, 1/sqrt(dim)) keyed by token, so coverage does not shift other rows.
AlignedEmbeddingTable load_aligned_vectors(const std::string& path,
                                           const Vocab& words, Index expect_dim,
                                           std::uint64_t seed);

/// Table with no vector source: every row draws from N(0, 1/sqrt(dim))
/// keyed by (seed, token), pad row zero. Row values are independent of the
/// vocab's composition, so extending a vocabulary later reproduces the
/// existing rows.
AlignedEmbeddingTable make_random_table(const Vocab& words, Index dim,
                                        std::uint64_t seed);

/// Fabricated aligned space: each lexeme id owns a base vector; every
/// surface form gets base + noise with ||noise|| <= 0.05 * ||base||, so
/// translations are geometrically close. Vector values depend only on
/// (seed, lexeme id, token), never on the vocab or language set.
AlignedEmbeddingTable make_synthetic_aligned(const Vocab& words,
                                             const LexemeMap& lexemes,
                                             Index dim, std::uint64_t seed);

/// The same construction, written as a .vec file covering every surface form
/// in the lexeme map. load_aligned_vectors on this file reproduces
/// make_synthetic_aligned row-for-row on covered words.
void write_synthetic_vec(const std::string& path, const LexemeMap& lexemes,
                         Index dim, std::uint64_t seed);

/// One fabricated row; shared by the table builder and the .vec writer.
std::vector<double> synthetic_vector(const std::string& token, Index lexeme,
                                     Index dim, std::uint64_t seed);

CharCnn make_char_cnn(Index n_chars, const EmbeddingConfig& cfg, Rng& rng);

/// Codepoint ids for a token under the char vocabulary (unk fallback).
std::vector<Index> token_char_ids(const VocabularyBundle& vocab,
                                  const std::string& token);

/// Per-token concatenation of word row and char-CNN features for the
/// `word_ids.size()` real tokens, padded with constant zero rows up to
/// total_rows. Returns {total_rows, d_word + char_out_dim}.
Var embed_tokens(const Embedder& emb, const std::vector<Index>& word_ids,
                 const std::vector<std::vector<Index>>& char_ids,
                 Index total_rows, Mode mode);

void set_freeze(Embedder& emb, bool frozen, EmbedScope scope);

/// All trainable parameter handles of the embedder, in a fixed order.
std::vector<Var> embedder_params(const Embedder& emb);

}  // namespace mlnlu
