#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mlnlu/data.hpp"

namespace mlnlu {

/// Surface token -> language-independent lexeme id. Surface inventories are
/// disjoint across languages, so one flat map covers a whole experiment.
using LexemeMap = std::unordered_map<std::string, Index>;

struct SynthResult {
  std::map<std::string, Corpus> train;  // per language
  std::map<std::string, Corpus> test;
  CorpusStats stats;
  LexemeMap lexemes;                    // every surface form of every language
  Index n_lexemes = 0;
};

/// Template-grammar generator: 3 domains, 7 intents, 8 slot types shared by
/// all languages; each language renders lexemes through its own syllable
/// inventory, so surface vocabularies are disjoint while translations share
/// a lexeme id. Deterministic under (languages, counts, seed).
///
/// per_language_count sets each language's train size; low_resource scales a
/// language's train size down without touching its test size (mirroring a
/// low-resource corpus whose test set stays full-sized). Test size is
/// per_language_count / 5, at least 1.
SynthResult gen_synthetic(const std::vector<std::string>& languages,
                          Index per_language_count, std::uint64_t seed,
                          const std::map<std::string, double>& low_resource = {});

/// Inventory the generator draws from; exposed so tests can check coverage.
struct SynthInventory {
  std::vector<std::string> domains;
  std::vector<std::string> intents;
  std::vector<std::string> slot_types;
};
const SynthInventory& synth_inventory();

}  // namespace mlnlu
