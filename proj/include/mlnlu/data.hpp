#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlnlu/errors.hpp"
#include "mlnlu/rng.hpp"
#include "mlnlu/tensor.hpp"

namespace mlnlu {

/// One training/evaluation record. Tokens are pre-tokenized; slots is a
/// same-length BIO tag sequence.
struct AnnotatedUtterance {
  std::string language;
  std::vector<std::string> tokens;
  std::string domain;
  std::string intent;
  std::vector<std::string> slots;

  bool operator==(const AnnotatedUtterance&) const = default;
};

using Corpus = std::vector<AnnotatedUtterance>;

/// Decodes UTF-8 into codepoints. Invalid byte sequences raise ParseError.
std::vector<std::uint32_t> utf8_codepoints(std::string_view s);
std::string codepoint_to_utf8(std::uint32_t cp);

/// Throws ValidationError if the record breaks any AnnotatedUtterance
/// invariant: length agreement, BIO well-formedness, whitespace-free tokens.
/// `where` prefixes the message (file:line context).
void validate_utterance(const AnnotatedUtterance& u, const std::string& where);

/// Splits a BIO tag into (kind, type): ("O",""), ("B","Artist"), ("I","x").
/// Malformed tags raise ValidationError.
std::pair<char, std::string> parse_bio_tag(const std::string& tag);

// ---- string <-> contiguous index mapping -------------------------------

class Vocab {
 public:
  /// Adds if absent; returns the index either way.
  Index add(const std::string& s);
  std::optional<Index> find(const std::string& s) const;
  /// Index lookup that throws IndexError when absent.
  Index at(const std::string& s) const;
  const std::string& name(Index i) const;
  Index size() const { return static_cast<Index>(items_.size()); }
  const std::vector<std::string>& items() const { return items_; }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, Index> index_;
};

/// Reserved word/char rows. Index 0 pads, index 1 catches unseen strings.
inline constexpr Index kPadIndex = 0;
inline constexpr Index kUnkIndex = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

struct VocabularyBundle {
  Vocab words;        // indices 0/1 reserved for pad/unk
  Vocab chars;        // codepoints stored as UTF-8 strings; 0/1 reserved
  Vocab domains;
  Vocab intents;
  Vocab slot_labels;  // includes "O"

  Index word_or_unk(const std::string& w) const {
    auto i = words.find(w);
    return i ? *i : kUnkIndex;
  }
  Index char_or_unk(std::uint32_t cp) const {
    auto i = chars.find(codepoint_to_utf8(cp));
    return i ? *i : kUnkIndex;
  }
};

/// Vocabularies covering every token, codepoint, and label in the corpus.
/// Multilingual corpora yield the union over languages.
VocabularyBundle build_vocab(const Corpus& corpus);

// ---- corpus file io ----------------------------------------------------
// One JSON object per line: {"language","tokens","domain","intent","slots"}.
// Blank lines ignored; '#' starts a comment line.

Corpus load_corpus(const std::string& path,
                   const std::optional<std::set<std::string>>& expected_languages =
                       std::nullopt);
void write_corpus(const std::string& path, const Corpus& corpus);

/// Deterministic shuffled partition; |train| = round(ratio * N).
std::pair<Corpus, Corpus> split_train_valid(const Corpus& corpus, double ratio,
                                            std::uint64_t seed);

// ---- batching ----------------------------------------------------------

struct Batch {
  std::vector<Index> utt_ids;  // indices into the source corpus
  Index max_len = 0;           // padded length within this batch
};

/// One epoch's batches. Every utterance appears exactly once. With
/// bucket_by_length, utterances are grouped by length first so per-batch
/// padding waste never exceeds the unbucketed grouping; batch order is then
/// shuffled.
std::vector<Batch> make_batches(const Corpus& corpus, Index batch_size,
                                std::uint64_t seed, bool bucket_by_length);

/// Sum over batches of (batch utterance count * max_len - total real tokens).
Index padding_waste(const Corpus& corpus, const std::vector<Batch>& batches);

// ---- stats -------------------------------------------------------------

struct LanguageStats {
  std::string language;
  Index utterances_train = 0;
  Index utterances_test = 0;
  Index intents = 0;  // distinct intents in train
  Index slots = 0;    // distinct slot types in train

  bool operator==(const LanguageStats&) const = default;
};

struct CorpusStats {
  std::vector<LanguageStats> languages;

  bool operator==(const CorpusStats&) const = default;
};

CorpusStats corpus_stats(const Corpus& train, const Corpus& test = {});
std::string stats_to_json(const CorpusStats& stats);
CorpusStats stats_from_json(const std::string& text);

}  // namespace mlnlu
