#include "mlnlu/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mlnlu {

using nlohmann::json;

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(seed ^ fnv1a64(label));
}

/// Token column of a ".vec" file (header line skipped).
std::vector<std::string> vec_file_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vector file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty vector file");
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    if (ls >> tok) tokens.push_back(tok);
  }
  return tokens;
}

void check_config(const DnnConfig& cfg) {
  if (cfg.hidden < 1 || cfg.ic_hidden < 1)
    throw ConfigError("hidden sizes must be >= 1");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw ConfigError("dropout must be in [0, 1)");
  if (cfg.emb.d_word < 1 || cfg.emb.d_char < 1 || cfg.emb.n_f < 1 ||
      cfg.emb.widths.empty())
    throw ConfigError("embedding config dimensions must be >= 1");
}

Vocab vocab_from_list(const json& arr) {
  Vocab v;
  for (const auto& s : arr) v.add(s.get<std::string>());
  return v;
}

const Tensord& need_array(const Checkpoint& cp, const std::string& name) {
  auto it = cp.arrays.find(name);
  if (it == cp.arrays.end())
    throw CorruptionError("checkpoint is missing array '" + name + "'");
  return it->second;
}

void expect_shape(const Tensord& t, const Shape& want, const std::string& name) {
  if (t.shape() != want)
    throw CorruptionError("checkpoint array '" + name + "' has shape " +
                          shape_str(t.shape()) + ", expected " +
                          shape_str(want));
}

}  // namespace

DnnModel make_dnn_model(const DnnConfig& cfg, VocabularyBundle vocab,
                        const std::string& vec_path, std::uint64_t seed) {
  check_config(cfg);
  if (vocab.intents.size() < 1)
    throw ConfigError("model needs at least one intent");
  if (vocab.slot_labels.size() < 1)
    throw ConfigError("model needs at least one slot label");

  if (!vec_path.empty()) {
    for (const std::string& tok : vec_file_tokens(vec_path)) {
      vocab.words.add(tok);
      for (std::uint32_t cp : utf8_codepoints(tok))
        vocab.chars.add(codepoint_to_utf8(cp));
    }
  }

  DnnModel m;
  m.cfg = cfg;
  const std::uint64_t word_seed = sub_seed(seed, "model.word");
  AlignedEmbeddingTable table =
      vec_path.empty()
          ? make_random_table(vocab.words, cfg.emb.d_word, word_seed)
          : load_aligned_vectors(vec_path, vocab.words, cfg.emb.d_word,
                                 word_seed);
  Rng cnn_rng = Rng::stream(seed, "model.cnn");
  m.emb = Embedder{std::move(table),
                   make_char_cnn(vocab.chars.size(), cfg.emb, cnn_rng),
                   cfg.emb};
  Rng enc_rng = Rng::stream(seed, "model.encoder");
  m.encoder = make_encoder(cfg.emb.token_dim(), cfg.hidden, cfg.dropout,
                           enc_rng);
  Rng crf_rng = Rng::stream(seed, "model.crf");
  m.crf = make_crf_head(cfg.context_dim(), vocab.slot_labels.size(), crf_rng);
  Rng ic_rng = Rng::stream(seed, "model.ic");
  m.ic = make_mlp_ic_head(cfg.context_dim(), cfg.ic_hidden,
                          vocab.intents.size(), cfg.dropout, cfg.mean_pool,
                          ic_rng);
  m.vocab = std::move(vocab);
  return m;
}

void set_dropout(DnnModel& m, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  m.cfg.dropout = rate;
  m.encoder.dropout_rate = rate;
  m.ic.dropout_rate = rate;
}

Var encode_utterance(const DnnModel& m, const std::vector<std::string>& tokens,
                     Mode mode, Rng* drop_rng) {
  if (tokens.empty())
    throw DimensionError("cannot encode an utterance with no tokens");
  std::vector<Index> word_ids;
  std::vector<std::vector<Index>> char_ids;
  word_ids.reserve(tokens.size());
  char_ids.reserve(tokens.size());
  for (const std::string& t : tokens) {
    word_ids.push_back(m.vocab.word_or_unk(t));
    char_ids.push_back(token_char_ids(m.vocab, t));
  }
  const Index n = static_cast<Index>(tokens.size());
  Var x = embed_tokens(m.emb, word_ids, char_ids, n, mode);
  return encode(m.encoder, x, n, mode, drop_rng);
}

UtteranceLosses utterance_losses(const DnnModel& m,
                                 const AnnotatedUtterance& u, Mode mode,
                                 Rng* drop_rng) {
  if (u.slots.size() != u.tokens.size())
    throw DimensionError("utterance has " + std::to_string(u.tokens.size()) +
                         " tokens but " + std::to_string(u.slots.size()) +
                         " slot tags");
  UtteranceLosses r;
  const auto intent_id = m.vocab.intents.find(u.intent);
  std::vector<Index> tag_ids;
  tag_ids.reserve(u.slots.size());
  bool slots_ok = true;
  for (const std::string& s : u.slots) {
    const auto id = m.vocab.slot_labels.find(s);
    if (!id) {
      slots_ok = false;
      break;
    }
    tag_ids.push_back(*id);
  }
  if (!intent_id && !slots_ok) return r;

  Var ctx = encode_utterance(m, u.tokens, mode, drop_rng);
  const Index n = static_cast<Index>(u.tokens.size());
  if (intent_id) {
    r.ic = softmax_cross_entropy(ic_logits(m.ic, ctx, n, mode, drop_rng),
                                 *intent_id);
    r.has_ic = true;
  }
  if (slots_ok) {
    r.ner = crf_nll(crf_emissions(m.crf, ctx, n), m.crf.transitions, tag_ids);
    r.has_ner = true;
  }
  return r;
}

UtterancePrediction predict_utterance(const DnnModel& m,
                                      const AnnotatedUtterance& u) {
  UtterancePrediction p;
  Var ctx = encode_utterance(m, u.tokens, Mode::Infer, nullptr);
  const Index n = static_cast<Index>(u.tokens.size());

  const Tensord logits = ic_logits(m.ic, ctx, n, Mode::Infer).value();
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  double lse = 0.0;
  for (Index i = 0; i < logits.size(); ++i)
    lse += std::exp(logits[i] - logits[best]);
  p.intent = m.vocab.intents.name(best);
  p.intent_score = -std::log(lse);  // log softmax at the argmax

  const Tensord emis = crf_emissions(m.crf, ctx, n).value();
  const ViterbiResult vit = crf_viterbi(emis, m.crf.transitions.value(), true,
                                        m.vocab.slot_labels.items());
  p.slot_tags.reserve(vit.tags.size());
  for (Index id : vit.tags) p.slot_tags.push_back(m.vocab.slot_labels.name(id));
  p.path_score = vit.score;

  if (m.dc) p.domain = predict_maxent(*m.dc, u).label;
  return p;
}

std::vector<UtterancePrediction> predict_corpus(const DnnModel& m,
                                                const Corpus& corpus) {
  std::vector<UtterancePrediction> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus) out.push_back(predict_utterance(m, u));
  return out;
}

std::vector<Var> dnn_params(const DnnModel& m) {
  std::vector<Var> out = embedder_params(m.emb);
  for (const Var& v : encoder_params(m.encoder)) out.push_back(v);
  for (const Var& v : crf_params(m.crf)) out.push_back(v);
  for (const Var& v : ic_params(m.ic)) out.push_back(v);
  return out;
}

std::vector<std::pair<std::string, Var>> dnn_named_params(const DnnModel& m) {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("emb.word", m.emb.word.rows);
  out.emplace_back("emb.chars", m.emb.cnn.char_table);
  for (std::size_t b = 0; b < m.emb.cnn.filters.size(); ++b) {
    out.emplace_back("emb.cnn" + std::to_string(b) + ".w", m.emb.cnn.filters[b]);
    out.emplace_back("emb.cnn" + std::to_string(b) + ".b", m.emb.cnn.biases[b]);
  }
  for (std::size_t l = 0; l < m.encoder.layers.size(); ++l)
    for (int d = 0; d < 2; ++d) {
      const std::string prefix =
          "enc.l" + std::to_string(l) + (d == 0 ? ".fwd." : ".bwd.");
      const LstmCellParams& cell = m.encoder.layers[l][static_cast<std::size_t>(d)];
      out.emplace_back(prefix + "W", cell.W);
      out.emplace_back(prefix + "U", cell.U);
      out.emplace_back(prefix + "b", cell.b);
    }
  out.emplace_back("crf.w", m.crf.proj_w);
  out.emplace_back("crf.b", m.crf.proj_b);
  out.emplace_back("crf.trans", m.crf.transitions);
  out.emplace_back("ic.w1", m.ic.w1);
  out.emplace_back("ic.b1", m.ic.b1);
  out.emplace_back("ic.w2", m.ic.w2);
  out.emplace_back("ic.b2", m.ic.b2);
  return out;
}

Checkpoint dnn_to_checkpoint(const DnnModel& m, const json& provenance) {
  json config{{"d_word", m.cfg.emb.d_word},   {"d_char", m.cfg.emb.d_char},
              {"n_f", m.cfg.emb.n_f},         {"widths", m.cfg.emb.widths},
              {"hidden", m.cfg.hidden},       {"ic_hidden", m.cfg.ic_hidden},
              {"dropout", m.cfg.dropout},     {"mean_pool", m.cfg.mean_pool}};
  json vocab{{"words", m.vocab.words.items()},
             {"chars", m.vocab.chars.items()},
             {"domains", m.vocab.domains.items()},
             {"intents", m.vocab.intents.items()},
             {"slot_labels", m.vocab.slot_labels.items()}};
  Checkpoint cp;
  cp.meta = json{{"kind", "dnn"},
                 {"config", config},
                 {"vocab", vocab},
                 {"embedding_source",
                  json{{"source", m.emb.word.source},
                       {"coverage", m.emb.word.coverage}}},
                 {"provenance", provenance}};
  if (m.dc) {
    cp.meta["dc"] = json{{"features", m.dc->features.items()},
                         {"classes", m.dc->classes.items()},
                         {"language_feature", m.dc->language_feature},
                         {"lambda", m.dc->lambda}};
    cp.arrays.emplace("dc.w", m.dc->w.value());
    cp.arrays.emplace("dc.b", m.dc->b.value());
  } else {
    cp.meta["dc"] = nullptr;
  }
  for (const auto& [name, v] : dnn_named_params(m))
    cp.arrays.emplace(name, v.value());
  return cp;
}

void apply_checkpoint_arrays(DnnModel& m, const Checkpoint& cp) {
  for (auto& [name, v] : dnn_named_params(m)) {
    const auto it = cp.arrays.find(name);
    if (it == cp.arrays.end())
      throw TransferError("checkpoint is missing array '" + name + "'");
    if (it->second.shape() != v.shape())
      throw TransferError("checkpoint array '" + name + "' has shape " +
                          shape_str(it->second.shape()) +
                          " but the model expects " + shape_str(v.shape()));
    Var target = v;  // handles share nodes; assign through the copy
    target.value() = it->second;
  }
}

DnnModel dnn_from_checkpoint(const Checkpoint& cp) {
  try {
    const json& meta = cp.meta;
    const std::string kind = meta.at("kind").get<std::string>();
    if (kind != "dnn")
      throw TransferError("checkpoint kind '" + kind +
                          "' where a dnn model is required");
    const json& cj = meta.at("config");
    DnnConfig cfg;
    cfg.emb.d_word = cj.at("d_word").get<Index>();
    cfg.emb.d_char = cj.at("d_char").get<Index>();
    cfg.emb.n_f = cj.at("n_f").get<Index>();
    cfg.emb.widths = cj.at("widths").get<std::vector<Index>>();
    cfg.hidden = cj.at("hidden").get<Index>();
    cfg.ic_hidden = cj.at("ic_hidden").get<Index>();
    cfg.dropout = cj.at("dropout").get<double>();
    cfg.mean_pool = cj.at("mean_pool").get<bool>();

    const json& vj = meta.at("vocab");
    VocabularyBundle vocab;
    vocab.words = vocab_from_list(vj.at("words"));
    vocab.chars = vocab_from_list(vj.at("chars"));
    vocab.domains = vocab_from_list(vj.at("domains"));
    vocab.intents = vocab_from_list(vj.at("intents"));
    vocab.slot_labels = vocab_from_list(vj.at("slot_labels"));

    DnnModel m = make_dnn_model(cfg, std::move(vocab), "", 0);
    try {
      apply_checkpoint_arrays(m, cp);
    } catch (const TransferError& e) {
      throw CorruptionError(std::string("checkpoint internally inconsistent: ") +
                            e.what());
    }
    m.emb.word.source =
        meta.at("embedding_source").at("source").get<std::string>();
    m.emb.word.coverage =
        meta.at("embedding_source").at("coverage").get<double>();

    if (!meta.at("dc").is_null()) {
      const json& dj = meta.at("dc");
      MaxEntModel dc;
      dc.features = vocab_from_list(dj.at("features"));
      dc.classes = vocab_from_list(dj.at("classes"));
      dc.scheme = FeatureScheme::Domain;
      dc.language_feature = dj.at("language_feature").get<bool>();
      dc.lambda = dj.at("lambda").get<double>();
      const Tensord& w = need_array(cp, "dc.w");
      expect_shape(w, {dc.features.size(), dc.classes.size()}, "dc.w");
      const Tensord& b = need_array(cp, "dc.b");
      expect_shape(b, {dc.classes.size()}, "dc.b");
      dc.w = Var::leaf(w);
      dc.b = Var::leaf(b);
      m.dc = std::move(dc);
    }
    return m;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint meta: ") + e.what());
  }
}

// ---- decoder-vocabulary surgery ---------------------------------------------

MlpIcHead expand_ic_head(const MlpIcHead& head, Index n_new_intents, Rng& rng) {
  if (n_new_intents < 0) throw ConfigError("cannot remove intents");
  if (n_new_intents == 0) return head;
  const Index n_old = head.n_intents;
  MlpIcHead out = head;
  Tensord w2({n_old + n_new_intents, head.d_hidden});
  w2.fill_xavier(rng);
  w2.mat().topRows(n_old) = head.w2.value().mat();
  Tensord b2 = Tensord::zeros({n_old + n_new_intents});
  b2.array().head(n_old) = head.b2.value().array();
  out.w2 = Var::leaf(std::move(w2));
  out.b2 = Var::leaf(std::move(b2));
  out.n_intents = n_old + n_new_intents;
  return out;
}

CrfHead expand_crf_head(const CrfHead& head, Index n_new_labels, Rng& rng) {
  if (n_new_labels < 0) throw ConfigError("cannot remove slot labels");
  if (n_new_labels == 0) return head;
  const Index n_old = head.n_labels;
  const Index n_all = n_old + n_new_labels;
  CrfHead out = head;

  Tensord pw({head.d_ctx, n_all});
  pw.fill_xavier(rng);
  pw.mat().leftCols(n_old) = head.proj_w.value().mat();
  Tensord pb = Tensord::zeros({n_all});
  pb.array().head(n_old) = head.proj_b.value().array();

  // Fresh boundary pattern for the grown label set; existing real-label,
  // start-row, and stop-column cells keep their trained values.
  Tensord tr = make_crf_transitions(n_all);
  const Tensord& old = head.transitions.value();
  for (Index i = 0; i < n_old; ++i)
    for (Index j = 0; j < n_old; ++j) tr(i, j) = old(i, j);
  for (Index j = 0; j < n_old; ++j)
    tr(crf_start(n_all), j) = old(crf_start(n_old), j);
  for (Index i = 0; i < n_old; ++i)
    tr(i, crf_stop(n_all)) = old(i, crf_stop(n_old));

  out.proj_w = Var::leaf(std::move(pw));
  out.proj_b = Var::leaf(std::move(pb));
  out.transitions = Var::leaf(std::move(tr));
  out.n_labels = n_all;
  return out;
}

// ---- classical baseline -------------------------------------------------------

MaxEntSystem train_maxent_system(const Corpus& corpus, MaxEntSystemConfig cfg) {
  cfg.dc.seed = sub_seed(cfg.seed, "baseline.dc");
  cfg.ic.seed = sub_seed(cfg.seed, "baseline.ic");
  cfg.ner.seed = sub_seed(cfg.seed, "baseline.ner");
  MaxEntSystem s;
  s.dc = train_maxent(corpus, FeatureScheme::Domain, cfg.dc);
  s.ic = train_maxent(corpus, FeatureScheme::Intent, cfg.ic);
  s.ner = train_sparse_crf(corpus, cfg.ner);
  return s;
}

UtterancePrediction predict_maxent_system(const MaxEntSystem& s,
                                          const AnnotatedUtterance& u) {
  UtterancePrediction p;
  p.domain = predict_maxent(s.dc, u).label;
  const MaxEntPrediction icp = predict_maxent(s.ic, u);
  p.intent = icp.label;
  p.intent_score = std::log(icp.probs[s.ic.classes.at(icp.label)]);

  const Var emis = sparse_crf_emissions(s.ner, u.tokens);
  const ViterbiResult vit = crf_viterbi(emis.value(), s.ner.transitions.value(),
                                        true, s.ner.labels.items());
  p.slot_tags.reserve(vit.tags.size());
  for (Index id : vit.tags) p.slot_tags.push_back(s.ner.labels.name(id));
  p.path_score = vit.score;
  return p;
}

std::vector<UtterancePrediction> predict_maxent_corpus(const MaxEntSystem& s,
                                                       const Corpus& corpus) {
  std::vector<UtterancePrediction> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus) out.push_back(predict_maxent_system(s, u));
  return out;
}

Checkpoint maxent_system_to_checkpoint(const MaxEntSystem& s,
                                       const json& provenance) {
  auto maxent_meta = [](const MaxEntModel& m) {
    return json{{"features", m.features.items()},
                {"classes", m.classes.items()},
                {"scheme",
                 m.scheme == FeatureScheme::Domain ? "domain" : "intent"},
                {"language_feature", m.language_feature},
                {"lambda", m.lambda}};
  };
  Checkpoint cp;
  cp.meta = json{{"kind", "maxent"},
                 {"dc", maxent_meta(s.dc)},
                 {"ic", maxent_meta(s.ic)},
                 {"ner", json{{"features", s.ner.features.items()},
                              {"labels", s.ner.labels.items()},
                              {"lambda", s.ner.lambda}}},
                 {"provenance", provenance}};
  cp.arrays.emplace("dc.w", s.dc.w.value());
  cp.arrays.emplace("dc.b", s.dc.b.value());
  cp.arrays.emplace("ic.w", s.ic.w.value());
  cp.arrays.emplace("ic.b", s.ic.b.value());
  cp.arrays.emplace("ner.w", s.ner.w.value());
  cp.arrays.emplace("ner.trans", s.ner.transitions.value());
  return cp;
}

MaxEntSystem maxent_system_from_checkpoint(const Checkpoint& cp) {
  try {
    const json& meta = cp.meta;
    const std::string kind = meta.at("kind").get<std::string>();
    if (kind != "maxent")
      throw TransferError("checkpoint kind '" + kind +
                          "' where a maxent baseline is required");
    auto load_maxent = [&](const json& mj, const std::string& prefix) {
      MaxEntModel m;
      m.features = vocab_from_list(mj.at("features"));
      m.classes = vocab_from_list(mj.at("classes"));
      m.scheme = mj.at("scheme").get<std::string>() == "domain"
                     ? FeatureScheme::Domain
                     : FeatureScheme::Intent;
      m.language_feature = mj.at("language_feature").get<bool>();
      m.lambda = mj.at("lambda").get<double>();
      const Tensord& w = need_array(cp, prefix + ".w");
      expect_shape(w, {m.features.size(), m.classes.size()}, prefix + ".w");
      const Tensord& b = need_array(cp, prefix + ".b");
      expect_shape(b, {m.classes.size()}, prefix + ".b");
      m.w = Var::leaf(w);
      m.b = Var::leaf(b);
      return m;
    };
    MaxEntSystem s;
    s.dc = load_maxent(meta.at("dc"), "dc");
    s.ic = load_maxent(meta.at("ic"), "ic");

    const json& nj = meta.at("ner");
    s.ner.features = vocab_from_list(nj.at("features"));
    s.ner.labels = vocab_from_list(nj.at("labels"));
    s.ner.lambda = nj.at("lambda").get<double>();
    const Tensord& w = need_array(cp, "ner.w");
    expect_shape(w, {s.ner.features.size(), s.ner.labels.size()}, "ner.w");
    const Tensord& tr = need_array(cp, "ner.trans");
    expect_shape(tr, {s.ner.labels.size() + 2, s.ner.labels.size() + 2},
                 "ner.trans");
    s.ner.w = Var::leaf(w);
    s.ner.transitions = Var::leaf(tr);
    return s;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint meta: ") + e.what());
  }
}

}  // namespace mlnlu
