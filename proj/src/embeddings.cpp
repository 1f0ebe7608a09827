#include "mlnlu/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mlnlu {

namespace {

Tensord random_row(const std::string& token, Index dim, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "wordinit:" + token);
  Tensord row({dim});
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Index i = 0; i < dim; ++i) row[i] = rng.normal(0.0, stddev);
  return row;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

AlignedEmbeddingTable load_aligned_vectors(const std::string& path,
                                           const Vocab& words, Index expect_dim,
                                           std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vector file: " + path);
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return path + ":" + std::to_string(line_no); };

  if (!std::getline(in, line)) throw ParseError(path + ": empty vector file");
  ++line_no;
  long long n_file = 0, d_file = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> n_file >> d_file) || n_file < 0 || d_file < 1)
      throw ParseError(where() + ": malformed header, expected 'N D'");
  }
  if (static_cast<Index>(d_file) != expect_dim)
    throw ConfigError("vector file dimension " + std::to_string(d_file) +
                      " does not match configured d_word " +
                      std::to_string(expect_dim));

  Tensord rows({words.size(), expect_dim});
  std::vector<bool> covered(static_cast<std::size_t>(words.size()), false);
  std::uint64_t digest = 1469598103934665603ull;
  Index n_covered = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    digest = fnv1a64(line.data(), line.size(), digest);
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    if (token.empty()) throw ParseError(where() + ": missing token");
    auto idx = words.find(token);
    Tensord row({expect_dim});
    for (Index i = 0; i < expect_dim; ++i)
      if (!(ls >> row[i]))
        throw ParseError(where() + ": expected " + std::to_string(expect_dim) +
                         " values for token '" + token + "'");
    double extra;
    if (ls >> extra)
      throw ParseError(where() + ": too many values for token '" + token + "'");
    if (idx && !covered[static_cast<std::size_t>(*idx)]) {
      for (Index i = 0; i < expect_dim; ++i) rows(*idx, i) = row[i];
      covered[static_cast<std::size_t>(*idx)] = true;
      ++n_covered;
    }
  }

  for (Index w = 0; w < words.size(); ++w) {
    if (w == kPadIndex) continue;  // stays zero
    if (covered[static_cast<std::size_t>(w)]) continue;
    Tensord r = random_row(words.name(w), expect_dim, seed);
    for (Index i = 0; i < expect_dim; ++i) rows(w, i) = r[i];
  }

  AlignedEmbeddingTable table;
  table.dim = expect_dim;
  table.rows = Var::leaf(std::move(rows));
  char hex[20];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(digest));
  table.source = hex;
  // pad and unk rows are bookkeeping, not coverage targets
  table.coverage = words.size() > 2
                       ? static_cast<double>(n_covered) /
                             static_cast<double>(words.size() - 2)
                       : 0.0;
  return table;
}

AlignedEmbeddingTable make_random_table(const Vocab& words, Index dim,
                                        std::uint64_t seed) {
  if (dim < 1) throw ConfigError("word dimension must be >= 1");
  Tensord rows({words.size(), dim});
  for (Index w = 0; w < words.size(); ++w) {
    if (w == kPadIndex) continue;
    Tensord r = random_row(words.name(w), dim, seed);
    for (Index i = 0; i < dim; ++i) rows(w, i) = r[i];
  }
  AlignedEmbeddingTable table;
  table.dim = dim;
  table.rows = Var::leaf(std::move(rows));
  table.source = "random";
  table.coverage = 0.0;
  return table;
}

std::vector<double> synthetic_vector(const std::string& token, Index lexeme,
                                     Index dim, std::uint64_t seed) {
  Rng base_rng = Rng::stream(seed, "lexbase:" + std::to_string(lexeme));
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> base(static_cast<std::size_t>(dim));
  double base_norm2 = 0.0;
  for (double& v : base) {
    v = base_rng.normal(0.0, stddev);
    base_norm2 += v * v;
  }
  // Noise direction is unit, magnitude strictly below 0.05 * ||base||.
  Rng noise_rng = Rng::stream(seed, "lexnoise:" + token);
  std::vector<double> dir(static_cast<std::size_t>(dim));
  double dir_norm2 = 0.0;
  for (double& v : dir) {
    v = noise_rng.normal();
    dir_norm2 += v * v;
  }
  const double mag =
      0.05 * noise_rng.uniform() * std::sqrt(base_norm2 / dir_norm2);
  for (std::size_t i = 0; i < base.size(); ++i) base[i] += mag * dir[i];
  return base;
}

AlignedEmbeddingTable make_synthetic_aligned(const Vocab& words,
                                             const LexemeMap& lexemes,
                                             Index dim, std::uint64_t seed) {
  Tensord rows({words.size(), dim});
  for (Index w = 0; w < words.size(); ++w) {
    if (w == kPadIndex) continue;
    const std::string& token = words.name(w);
    auto it = lexemes.find(token);
    if (it == lexemes.end()) {
      Tensord r = random_row(token, dim, seed);
      for (Index i = 0; i < dim; ++i) rows(w, i) = r[i];
      continue;
    }
    std::vector<double> v = synthetic_vector(token, it->second, dim, seed);
    for (Index i = 0; i < dim; ++i) rows(w, i) = v[static_cast<std::size_t>(i)];
  }
  AlignedEmbeddingTable table;
  table.dim = dim;
  table.rows = Var::leaf(std::move(rows));
  table.source = "synthetic";
  table.coverage = 1.0;
  return table;
}

void write_synthetic_vec(const std::string& path, const LexemeMap& lexemes,
                         Index dim, std::uint64_t seed) {
  // Sorted tokens: deterministic file bytes regardless of map order.
  std::vector<std::pair<std::string, Index>> entries(lexemes.begin(), lexemes.end());
  std::sort(entries.begin(), entries.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << entries.size() << ' ' << dim << '\n';
  for (const auto& [token, lex] : entries) {
    out << token;
    for (double v : synthetic_vector(token, lex, dim, seed))
      out << ' ' << format_value(v);
    out << '\n';
  }
  if (!out) throw ParseError("write failed: " + path);
}

CharCnn make_char_cnn(Index n_chars, const EmbeddingConfig& cfg, Rng& rng) {
  if (n_chars < 2) throw ConfigError("char vocab too small");
  if (cfg.n_f < 1 || cfg.d_char < 1 || cfg.widths.empty())
    throw ConfigError("invalid char CNN config");
  CharCnn cnn;
  Tensord table({n_chars, cfg.d_char});
  table.fill_xavier(rng);
  table.mat().row(kPadIndex).setZero();
  cnn.char_table = Var::leaf(std::move(table));
  for (Index w : cfg.widths) {
    Tensord f({cfg.n_f, w, cfg.d_char});
    f.fill_xavier(rng);
    cnn.filters.push_back(Var::leaf(std::move(f)));
    cnn.biases.push_back(Var::leaf(Tensord::zeros({cfg.n_f})));
  }
  cnn.out_dim = cfg.char_out_dim();
  return cnn;
}

std::vector<Index> token_char_ids(const VocabularyBundle& vocab,
                                  const std::string& token) {
  std::vector<Index> ids;
  for (std::uint32_t cp : utf8_codepoints(token))
    ids.push_back(vocab.char_or_unk(cp));
  return ids;
}

Var embed_tokens(const Embedder& emb, const std::vector<Index>& word_ids,
                 const std::vector<std::vector<Index>>& char_ids,
                 Index total_rows, Mode /*mode*/) {
  if (word_ids.empty()) throw DimensionError("embed_tokens: no tokens");
  if (word_ids.size() != char_ids.size())
    throw DimensionError("embed_tokens: word/char id lists differ in length");
  const auto n_real = static_cast<Index>(word_ids.size());
  if (total_rows < n_real)
    throw DimensionError("embed_tokens: total_rows below token count");

  Var word_part = rows_lookup(emb.word.rows, word_ids);  // {T, d_word}

  std::vector<Var> char_feats;
  char_feats.reserve(char_ids.size());
  for (const std::vector<Index>& ids : char_ids) {
    if (ids.empty())
      throw DimensionError("embed_tokens: token with no characters");
    Var crows = rows_lookup(emb.cnn.char_table, ids);  // {n_chars, d_char}
    std::vector<Var> banks;
    for (std::size_t b = 0; b < emb.cnn.filters.size(); ++b)
      banks.push_back(conv1d_maxpool(crows, emb.cnn.filters[b], emb.cnn.biases[b]));
    char_feats.push_back(concat(banks));  // {3 n_f}
  }
  Var char_part = stack_rows(char_feats);  // {T, 3 n_f}

  Var tokens = hconcat(word_part, char_part);
  return total_rows == n_real ? tokens : pad_rows(tokens, total_rows);
}

void set_freeze(Embedder& emb, bool frozen, EmbedScope scope) {
  if (scope == EmbedScope::WordTable || scope == EmbedScope::All)
    emb.word.rows.set_requires_grad(!frozen);
  if (scope == EmbedScope::CharCnn || scope == EmbedScope::All) {
    emb.cnn.char_table.set_requires_grad(!frozen);
    for (Var& f : emb.cnn.filters) f.set_requires_grad(!frozen);
    for (Var& b : emb.cnn.biases) b.set_requires_grad(!frozen);
  }
}

std::vector<Var> embedder_params(const Embedder& emb) {
  std::vector<Var> out{emb.word.rows, emb.cnn.char_table};
  for (const Var& f : emb.cnn.filters) out.push_back(f);
  for (const Var& b : emb.cnn.biases) out.push_back(b);
  return out;
}

}  // namespace mlnlu
