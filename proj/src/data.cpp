#include "mlnlu/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mlnlu {

using nlohmann::json;

std::vector<std::uint32_t> utf8_codepoints(std::string_view s) {
  std::vector<std::uint32_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    std::uint32_t cp;
    std::size_t n;
    if (b0 < 0x80) {
      cp = b0;
      n = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      n = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      n = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      n = 4;
    } else {
      throw ParseError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + n > s.size())
      throw ParseError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < n; ++k) {
      const unsigned char b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80)
        throw ParseError("invalid UTF-8 continuation at offset " +
                         std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += n;
  }
  return out;
}

std::string codepoint_to_utf8(std::uint32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return s;
}

std::pair<char, std::string> parse_bio_tag(const std::string& tag) {
  if (tag == "O") return {'O', ""};
  if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-')
    return {tag[0], tag.substr(2)};
  throw ValidationError("slot tag '" + tag + "' is not O, B-<type>, or I-<type>");
}

void validate_utterance(const AnnotatedUtterance& u, const std::string& where) {
  auto fail = [&where](const std::string& msg) {
    throw ValidationError(where.empty() ? msg : where + ": " + msg);
  };
  if (u.tokens.empty()) fail("utterance has no tokens");
  if (u.slots.size() != u.tokens.size())
    fail("slots length " + std::to_string(u.slots.size()) +
         " != tokens length " + std::to_string(u.tokens.size()));
  if (u.language.empty()) fail("empty language tag");
  if (u.domain.empty()) fail("empty domain");
  if (u.intent.empty()) fail("empty intent");
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    if (u.tokens[i].empty()) fail("empty token at index " + std::to_string(i));
    for (unsigned char c : u.tokens[i])
      if (std::isspace(c))
        fail("token at index " + std::to_string(i) + " contains whitespace");
  }
  // BIO rule: I-X only directly after B-X or I-X of the same type.
  std::string prev_type;
  char prev_kind = 'O';
  for (std::size_t i = 0; i < u.slots.size(); ++i) {
    std::pair<char, std::string> kt;
    try {
      kt = parse_bio_tag(u.slots[i]);
    } catch (const ValidationError& e) {
      fail(std::string(e.what()) + " at token index " + std::to_string(i));
    }
    if (kt.first == 'I' && !(prev_kind != 'O' && prev_type == kt.second))
      fail("BIO violation at token index " + std::to_string(i) + ": I-" +
           kt.second + " not preceded by B-" + kt.second + " or I-" + kt.second);
    prev_kind = kt.first;
    prev_type = kt.second;
  }
}

Index Vocab::add(const std::string& s) {
  auto it = index_.find(s);
  if (it != index_.end()) return it->second;
  const Index i = static_cast<Index>(items_.size());
  items_.push_back(s);
  index_.emplace(s, i);
  return i;
}

std::optional<Index> Vocab::find(const std::string& s) const {
  auto it = index_.find(s);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Index Vocab::at(const std::string& s) const {
  auto i = find(s);
  if (!i) throw IndexError("'" + s + "' not in vocabulary");
  return *i;
}

const std::string& Vocab::name(Index i) const {
  if (i < 0 || i >= size())
    throw IndexError("vocab index " + std::to_string(i) + " outside [0," +
                     std::to_string(size()) + ")");
  return items_[static_cast<std::size_t>(i)];
}

VocabularyBundle build_vocab(const Corpus& corpus) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  VocabularyBundle v;
  v.words.add(kPadToken);
  v.words.add(kUnkToken);
  v.chars.add(kPadToken);
  v.chars.add(kUnkToken);
  v.slot_labels.add("O");
  for (const AnnotatedUtterance& u : corpus) {
    v.domains.add(u.domain);
    v.intents.add(u.intent);
    for (const std::string& t : u.tokens) {
      v.words.add(t);
      for (std::uint32_t cp : utf8_codepoints(t)) v.chars.add(codepoint_to_utf8(cp));
    }
    for (const std::string& s : u.slots) v.slot_labels.add(s);
  }
  return v;
}

Corpus load_corpus(const std::string& path,
                   const std::optional<std::set<std::string>>& expected_languages) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    AnnotatedUtterance u;
    try {
      u.language = j.at("language").get<std::string>();
      u.tokens = j.at("tokens").get<std::vector<std::string>>();
      u.domain = j.at("domain").get<std::string>();
      u.intent = j.at("intent").get<std::string>();
      u.slots = j.at("slots").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    validate_utterance(u, where);
    if (expected_languages && !expected_languages->count(u.language))
      throw ValidationError(where + ": unexpected language '" + u.language + "'");
    corpus.push_back(std::move(u));
  }
  return corpus;
}

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);  // binary: stable newlines
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const AnnotatedUtterance& u : corpus) {
    json j;
    j["language"] = u.language;
    j["tokens"] = u.tokens;
    j["domain"] = u.domain;
    j["intent"] = u.intent;
    j["slots"] = u.slots;
    out << j.dump() << '\n';
  }
  if (!out) throw ParseError("write failed: " + path);
}

std::pair<Corpus, Corpus> split_train_valid(const Corpus& corpus, double ratio,
                                            std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("split ratio " + std::to_string(ratio) + " outside (0,1)");
  if (corpus.size() < 2)
    throw ValidationError("cannot split a corpus with fewer than 2 utterances");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, "split");
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(corpus.size())));
  std::pair<Corpus, Corpus> out;
  out.first.reserve(n_train);
  out.second.reserve(corpus.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(corpus[order[i]]);
  return out;
}

std::vector<Batch> make_batches(const Corpus& corpus, Index batch_size,
                                std::uint64_t seed, bool bucket_by_length) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<Index> order(corpus.size());
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = Rng::stream(seed, "batch");
  rng.shuffle(order);
  if (bucket_by_length) {
    // Stable sort on top of the shuffle: equal lengths stay shuffled, while
    // contiguous grouping minimizes the sum of per-batch maxima.
    std::stable_sort(order.begin(), order.end(), [&corpus](Index a, Index b) {
      return corpus[static_cast<std::size_t>(a)].tokens.size() <
             corpus[static_cast<std::size_t>(b)].tokens.size();
    });
  }
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    Batch b;
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    for (std::size_t k = i; k < end; ++k) {
      b.utt_ids.push_back(order[k]);
      b.max_len = std::max(
          b.max_len,
          static_cast<Index>(corpus[static_cast<std::size_t>(order[k])].tokens.size()));
    }
    batches.push_back(std::move(b));
  }
  if (bucket_by_length) rng.shuffle(batches);
  return batches;
}

Index padding_waste(const Corpus& corpus, const std::vector<Batch>& batches) {
  Index waste = 0;
  for (const Batch& b : batches)
    for (Index id : b.utt_ids)
      waste += b.max_len -
               static_cast<Index>(corpus[static_cast<std::size_t>(id)].tokens.size());
  return waste;
}

CorpusStats corpus_stats(const Corpus& train, const Corpus& test) {
  struct Acc {
    Index n_train = 0, n_test = 0;
    std::set<std::string> intents;
    std::set<std::string> slot_types;
  };
  std::map<std::string, Acc> by_lang;  // ordered for a stable report
  for (const AnnotatedUtterance& u : train) {
    Acc& a = by_lang[u.language];
    ++a.n_train;
    a.intents.insert(u.intent);
    for (const std::string& s : u.slots) {
      auto [kind, type] = parse_bio_tag(s);
      if (kind == 'B') a.slot_types.insert(type);
    }
  }
  for (const AnnotatedUtterance& u : test) ++by_lang[u.language].n_test;
  CorpusStats stats;
  for (const auto& [lang, a] : by_lang) {
    LanguageStats ls;
    ls.language = lang;
    ls.utterances_train = a.n_train;
    ls.utterances_test = a.n_test;
    ls.intents = static_cast<Index>(a.intents.size());
    ls.slots = static_cast<Index>(a.slot_types.size());
    stats.languages.push_back(std::move(ls));
  }
  return stats;
}

std::string stats_to_json(const CorpusStats& stats) {
  json langs = json::array();
  for (const LanguageStats& ls : stats.languages) {
    langs.push_back({{"language", ls.language},
                     {"utterances_train", ls.utterances_train},
                     {"utterances_test", ls.utterances_test},
                     {"intents", ls.intents},
                     {"slots", ls.slots}});
  }
  return json{{"languages", langs}}.dump(2);
}

CorpusStats stats_from_json(const std::string& text) {
  CorpusStats stats;
  try {
    json j = json::parse(text);
    for (const json& e : j.at("languages")) {
      LanguageStats ls;
      ls.language = e.at("language").get<std::string>();
      ls.utterances_train = e.at("utterances_train").get<Index>();
      ls.utterances_test = e.at("utterances_test").get<Index>();
      ls.intents = e.at("intents").get<Index>();
      ls.slots = e.at("slots").get<Index>();
      stats.languages.push_back(std::move(ls));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("stats JSON: ") + e.what());
  }
  return stats;
}

}  // namespace mlnlu
