#include "mlnlu/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mlnlu {

namespace {

struct TemplateElem {
  bool is_slot;
  Index id;  // function-lexeme id, or slot-type index
};
using Template = std::vector<TemplateElem>;

struct IntentDef {
  std::string name;
  Index domain;
  std::vector<Template> templates;
};

// The shared interlingua: every language renders the same lexeme ids through
// its own surface forms, so corpora are parallel in meaning but disjoint in
// tokens.
struct Grammar {
  std::vector<std::string> domains;
  std::vector<std::string> slot_types;
  std::vector<IntentDef> intents;
  std::vector<std::vector<Index>> fillers;  // per slot type: lexeme ids
  Index n_lexemes = 0;
};

Grammar build_grammar() {
  Grammar g;
  g.domains = {"music", "weather", "alarm"};
  g.slot_types = {"artist", "song",     "playlist", "city",
                  "date",   "time",     "duration", "alarm_name"};

  Index next_lexeme = 0;
  auto word = [&next_lexeme](std::unordered_map<std::string, Index>& reg,
                             const std::string& w) {
    auto it = reg.find(w);
    if (it != reg.end()) return it->second;
    reg.emplace(w, next_lexeme);
    return next_lexeme++;
  };
  std::unordered_map<std::string, Index> reg;

  auto W = [&](const std::string& w) {
    return TemplateElem{false, word(reg, w)};
  };
  auto S = [&g](const std::string& type) {
    auto it = std::find(g.slot_types.begin(), g.slot_types.end(), type);
    return TemplateElem{true, static_cast<Index>(it - g.slot_types.begin())};
  };

  auto intent = [&g](std::string name, Index domain,
                     std::vector<Template> templates) {
    g.intents.push_back({std::move(name), domain, std::move(templates)});
  };

  intent("play_song", 0,
         {{W("play"), S("song")},
          {W("play"), S("song"), W("by"), S("artist")},
          {W("start"), W("track"), S("song")},
          {W("play"), W("something"), W("by"), S("artist")}});
  intent("add_to_playlist", 0,
         {{W("add"), S("song"), W("to"), S("playlist")},
          {W("put"), S("song"), W("into"), W("list"), S("playlist")},
          {W("add"), W("this"), W("track"), W("to"), S("playlist")}});
  intent("get_forecast", 1,
         {{W("what"), W("is"), W("weather"), W("in"), S("city")},
          {W("forecast"), W("for"), S("city"), S("date")},
          {W("will"), W("it"), W("rain"), W("in"), S("city"), S("date")}});
  intent("get_temperature", 1,
         {{W("how"), W("hot"), W("in"), S("city")},
          {W("temperature"), W("in"), S("city"), S("date")},
          {W("what"), W("is"), W("temperature"), W("in"), S("city")}});
  intent("set_alarm", 2,
         {{W("set"), W("alarm"), W("for"), S("time")},
          {W("wake"), W("me"), W("at"), S("time"), S("date")},
          {W("set"), W("alarm"), W("named"), S("alarm_name"), W("for"), S("time")}});
  intent("cancel_alarm", 2,
         {{W("cancel"), W("alarm"), S("alarm_name")},
          {W("remove"), W("my"), S("time"), W("alarm")},
          {W("cancel"), W("every"), W("alarm")}});
  intent("snooze_alarm", 2,
         {{W("snooze"), W("for"), S("duration")},
          {W("snooze"), W("alarm"), S("alarm_name"), W("for"), S("duration")},
          {W("stop"), W("alarm"), W("for"), S("duration")}});

  const Index pool_sizes[] = {12, 14, 8, 12, 6, 10, 6, 8};
  for (std::size_t ti = 0; ti < g.slot_types.size(); ++ti) {
    std::vector<Index> pool;
    for (Index k = 0; k < pool_sizes[ti]; ++k) pool.push_back(next_lexeme++);
    g.fillers.push_back(std::move(pool));
  }
  g.n_lexemes = next_lexeme;
  return g;
}

const Grammar& grammar() {
  static const Grammar g = build_grammar();
  return g;
}

// Per-language surface lexicon. Languages draw consonants from rotated
// windows of a shared pool; a global used-set keeps every surface form
// unique across the whole experiment, which makes per-language vocabularies
// disjoint.
std::vector<std::string> render_lexicon(const std::string& lang,
                                        std::uint64_t seed, Index lang_index,
                                        std::set<std::string>& used) {
  static const char* kConsonants[] = {"b", "d",  "f", "g", "k", "l", "m",
                                      "n", "p",  "r", "s", "t", "v", "z",
                                      "ch", "j", "w", "y", "h", "x"};
  static const char* kVowels[] = {"a", "e", "i", "o", "u"};
  std::vector<std::string> cons;
  for (Index k = 0; k < 7; ++k)
    cons.push_back(kConsonants[(lang_index * 7 + k) % 20]);

  Rng rng = Rng::stream(seed, "lexicon:" + lang);
  auto syllable = [&] {
    return cons[static_cast<std::size_t>(rng.below(cons.size()))] +
           kVowels[static_cast<std::size_t>(rng.below(5))];
  };
  std::vector<std::string> surfaces;
  for (Index lex = 0; lex < grammar().n_lexemes; ++lex) {
    std::string tok = syllable() + syllable();
    if (rng.uniform() < 0.4) tok += syllable();
    while (used.count(tok)) tok += syllable();
    used.insert(tok);
    surfaces.push_back(std::move(tok));
  }
  return surfaces;
}

Corpus gen_language_corpus(const std::string& lang,
                           const std::vector<std::string>& surfaces,
                           Index count, std::uint64_t seed,
                           const std::string& split) {
  const Grammar& g = grammar();
  Rng rng = Rng::stream(seed, "utts:" + lang + ":" + split);
  Corpus corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const IntentDef& intent =
        g.intents[static_cast<std::size_t>(rng.below(g.intents.size()))];
    const Template& tpl =
        intent.templates[static_cast<std::size_t>(rng.below(intent.templates.size()))];
    AnnotatedUtterance u;
    u.language = lang;
    u.domain = g.domains[static_cast<std::size_t>(intent.domain)];
    u.intent = intent.name;
    for (const TemplateElem& e : tpl) {
      if (!e.is_slot) {
        u.tokens.push_back(surfaces[static_cast<std::size_t>(e.id)]);
        u.slots.push_back("O");
        continue;
      }
      const auto& pool = g.fillers[static_cast<std::size_t>(e.id)];
      const std::string& type = g.slot_types[static_cast<std::size_t>(e.id)];
      const Index span = 1 + (rng.uniform() < 0.3 ? 1 : 0);
      for (Index k = 0; k < span; ++k) {
        Index lex = pool[static_cast<std::size_t>(rng.below(pool.size()))];
        u.tokens.push_back(surfaces[static_cast<std::size_t>(lex)]);
        u.slots.push_back((k == 0 ? "B-" : "I-") + type);
      }
    }
    corpus.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace

const SynthInventory& synth_inventory() {
  static const SynthInventory inv = [] {
    SynthInventory i;
    const Grammar& g = grammar();
    i.domains = g.domains;
    for (const IntentDef& d : g.intents) i.intents.push_back(d.name);
    i.slot_types = g.slot_types;
    return i;
  }();
  return inv;
}

SynthResult gen_synthetic(const std::vector<std::string>& languages,
                          Index per_language_count, std::uint64_t seed,
                          const std::map<std::string, double>& low_resource) {
  if (languages.empty()) throw ConfigError("gen_synthetic: no languages");
  if (per_language_count < 1)
    throw ConfigError("gen_synthetic: per_language_count must be >= 1");
  {
    std::set<std::string> uniq(languages.begin(), languages.end());
    if (uniq.size() != languages.size())
      throw ConfigError("gen_synthetic: duplicate language");
  }
  for (const auto& [lang, frac] : low_resource) {
    if (!(frac > 0.0 && frac <= 1.0))
      throw ConfigError("gen_synthetic: low-resource fraction for " + lang +
                        " outside (0,1]");
    if (std::find(languages.begin(), languages.end(), lang) == languages.end())
      throw ConfigError("gen_synthetic: low-resource language " + lang +
                        " not in language list");
  }

  // Lexicons are built over sorted names so the shared uniqueness set sees
  // languages in one canonical order regardless of the caller's list order.
  std::vector<std::string> sorted_langs(languages.begin(), languages.end());
  std::sort(sorted_langs.begin(), sorted_langs.end());
  std::set<std::string> used;
  std::map<std::string, std::vector<std::string>> lexicons;
  for (std::size_t i = 0; i < sorted_langs.size(); ++i)
    lexicons[sorted_langs[i]] = render_lexicon(sorted_langs[i], seed,
                                               static_cast<Index>(i), used);

  SynthResult out;
  out.n_lexemes = grammar().n_lexemes;
  for (const auto& [lang, surfaces] : lexicons)
    for (Index lex = 0; lex < out.n_lexemes; ++lex)
      out.lexemes.emplace(surfaces[static_cast<std::size_t>(lex)], lex);

  Corpus all_train, all_test;
  for (const std::string& lang : languages) {
    Index n_train = per_language_count;
    if (auto it = low_resource.find(lang); it != low_resource.end())
      n_train = std::max<Index>(
          1, static_cast<Index>(std::llround(it->second * per_language_count)));
    // Test size stays full even for low-resource languages, like a
    // low-resource corpus that is still evaluated on a complete test set.
    const Index n_test = std::max<Index>(1, per_language_count / 5);
    out.train[lang] = gen_language_corpus(lang, lexicons[lang], n_train, seed, "train");
    out.test[lang] = gen_language_corpus(lang, lexicons[lang], n_test, seed, "test");
    all_train.insert(all_train.end(), out.train[lang].begin(), out.train[lang].end());
    all_test.insert(all_test.end(), out.test[lang].begin(), out.test[lang].end());
  }
  out.stats = corpus_stats(all_train, all_test);
  return out;
}

}  // namespace mlnlu
