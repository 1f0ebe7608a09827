#include "mlnlu/maxent.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace mlnlu {

namespace {

/// Id-aggregating feature collector: one (id, value) pair per distinct
/// feature, first-occurrence order, repeated adds summed.
class FeatBuilder {
 public:
  FeatBuilder(const Vocab& ro, Vocab* rw) : ro_(ro), rw_(rw) {}

  void add(const std::string& name, double val = 1.0) {
    Index id;
    if (rw_) {
      id = rw_->add(name);
    } else {
      auto found = ro_.find(name);
      if (!found) return;
      id = *found;
    }
    auto it = slot_.find(id);
    if (it == slot_.end()) {
      slot_.emplace(id, out_.size());
      out_.emplace_back(id, val);
    } else {
      out_[it->second].second += val;
    }
  }

  SparseFeats take() { return std::move(out_); }

 private:
  const Vocab& ro_;
  Vocab* rw_;
  SparseFeats out_;
  std::unordered_map<Index, std::size_t> slot_;
};

std::string length_bucket(std::size_t n) {
  if (n <= 5) return std::to_string(n);
  if (n <= 10) return "6-10";
  return "11+";
}

void collect_utterance(const AnnotatedUtterance& u, FeatureScheme scheme,
                       bool language_feature, FeatBuilder& fb) {
  for (const std::string& tok : u.tokens) fb.add("U=" + tok);
  for (std::size_t i = 0; i + 1 < u.tokens.size(); ++i)
    fb.add("B=" + u.tokens[i] + "_" + u.tokens[i + 1]);
  fb.add("LEN=" + length_bucket(u.tokens.size()));
  if (scheme == FeatureScheme::Domain && language_feature)
    fb.add("LANG=" + u.language);
}

void collect_ner_token(const std::vector<std::string>& tokens, std::size_t pos,
                       FeatBuilder& fb) {
  if (pos >= tokens.size())
    throw IndexError("featurize_ner_token: position " + std::to_string(pos) +
                     " outside [0," + std::to_string(tokens.size()) + ")");
  const std::string& tok = tokens[pos];
  fb.add("W=" + tok);
  std::string lower = tok;
  for (char& c : lower)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  fb.add("LOW=" + lower);
  fb.add("PREV=" + (pos > 0 ? tokens[pos - 1] : std::string("<s>")));
  fb.add("NEXT=" +
         (pos + 1 < tokens.size() ? tokens[pos + 1] : std::string("</s>")));

  const std::vector<std::uint32_t> cps = utf8_codepoints(tok);
  const std::size_t n = cps.size();
  for (std::size_t k = 1; k <= 3 && k <= n; ++k) {
    std::string pre, suf;
    for (std::size_t i = 0; i < k; ++i) {
      pre += codepoint_to_utf8(cps[i]);
      suf += codepoint_to_utf8(cps[n - k + i]);
    }
    fb.add("PRE" + std::to_string(k) + "=" + pre);
    fb.add("SUF" + std::to_string(k) + "=" + suf);
  }
  if (!cps.empty() && cps.front() >= 'A' && cps.front() <= 'Z')
    fb.add("CAP=true");
  for (std::uint32_t cp : cps)
    if (cp >= '0' && cp <= '9') {
      fb.add("DIG=true");
      break;
    }
}

void check_sgd_config(double lambda, Index epochs, double lr, Index batch_size) {
  if (lambda < 0.0) throw ConfigError("negative L2 strength");
  if (epochs < 0) throw ConfigError("negative epoch count");
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

void sgd_step(std::vector<Var> params, double lr) {  // Vars share their nodes
  for (Var& p : params) {
    if (p.grad()) p.value().array() -= lr * p.grad()->array();
    p.clear_grad();
  }
}

const std::string& class_field(const AnnotatedUtterance& u,
                               FeatureScheme scheme) {
  return scheme == FeatureScheme::Domain ? u.domain : u.intent;
}

}  // namespace

SparseFeats featurize_utterance(const AnnotatedUtterance& u,
                                FeatureScheme scheme, Vocab& dict, bool grow,
                                bool language_feature) {
  FeatBuilder fb(dict, grow ? &dict : nullptr);
  collect_utterance(u, scheme, language_feature, fb);
  return fb.take();
}

SparseFeats featurize_utterance(const AnnotatedUtterance& u,
                                FeatureScheme scheme, const Vocab& dict,
                                bool language_feature) {
  FeatBuilder fb(dict, nullptr);
  collect_utterance(u, scheme, language_feature, fb);
  return fb.take();
}

SparseFeats featurize_ner_token(const std::vector<std::string>& tokens,
                                std::size_t pos, Vocab& dict, bool grow) {
  FeatBuilder fb(dict, grow ? &dict : nullptr);
  collect_ner_token(tokens, pos, fb);
  return fb.take();
}

SparseFeats featurize_ner_token(const std::vector<std::string>& tokens,
                                std::size_t pos, const Vocab& dict) {
  FeatBuilder fb(dict, nullptr);
  collect_ner_token(tokens, pos, fb);
  return fb.take();
}

Var maxent_batch_loss(const MaxEntModel& m,
                      const std::vector<std::pair<SparseFeats, Index>>& batch) {
  if (batch.empty()) throw ConfigError("maxent_batch_loss: empty batch");
  Var ce_sum;
  for (const auto& [feats, target] : batch) {
    Var logits = add(sparse_combine(m.w, feats), m.b);
    Var ce = softmax_cross_entropy(logits, target);
    ce_sum = ce_sum.defined() ? add(ce_sum, ce) : ce;
  }
  Var loss = scale(ce_sum, 1.0 / static_cast<double>(batch.size()));
  if (m.lambda > 0.0)
    loss = add(loss, scale(sum(mul(m.w, m.w)), m.lambda / 2.0));
  return loss;
}

MaxEntModel train_maxent(const Corpus& corpus, FeatureScheme scheme,
                         const MaxEntConfig& cfg) {
  if (corpus.empty()) throw ConfigError("train_maxent: empty corpus");
  check_sgd_config(cfg.lambda, cfg.epochs, cfg.lr, cfg.batch_size);

  MaxEntModel m;
  m.scheme = scheme;
  m.language_feature = cfg.language_feature;
  m.lambda = cfg.lambda;
  for (const AnnotatedUtterance& u : corpus) m.classes.add(class_field(u, scheme));
  if (m.classes.size() < 2)
    throw ConfigError("train_maxent: need >= 2 classes, corpus has " +
                      std::to_string(m.classes.size()));

  std::vector<std::pair<SparseFeats, Index>> examples;
  examples.reserve(corpus.size());
  for (const AnnotatedUtterance& u : corpus)
    examples.emplace_back(
        featurize_utterance(u, scheme, m.features, true, cfg.language_feature),
        m.classes.at(class_field(u, scheme)));

  m.w = Var::leaf(Tensord::zeros({m.features.size(), m.classes.size()}));
  m.b = Var::leaf(Tensord::zeros({m.classes.size()}));

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<Batch> batches =
        make_batches(corpus, cfg.batch_size,
                     cfg.seed + static_cast<std::uint64_t>(epoch), false);
    for (const Batch& batch : batches) {
      std::vector<std::pair<SparseFeats, Index>> slice;
      slice.reserve(batch.utt_ids.size());
      for (Index id : batch.utt_ids)
        slice.push_back(examples[static_cast<std::size_t>(id)]);
      Tape tape;
      {
        TapeScope scope(tape);
        backward(maxent_batch_loss(m, slice));
      }
      sgd_step({m.w, m.b}, cfg.lr);
    }
  }
  return m;
}

double maxent_loss(const MaxEntModel& m, const Corpus& corpus) {
  if (corpus.empty()) throw ConfigError("maxent_loss: empty corpus");
  std::vector<std::pair<SparseFeats, Index>> all;
  all.reserve(corpus.size());
  for (const AnnotatedUtterance& u : corpus)
    all.emplace_back(
        featurize_utterance(u, m.scheme, m.features, m.language_feature),
        m.classes.at(class_field(u, m.scheme)));
  return maxent_batch_loss(m, all).value()[0];
}

MaxEntPrediction predict_maxent(const MaxEntModel& m,
                                const AnnotatedUtterance& u) {
  const SparseFeats feats =
      featurize_utterance(u, m.scheme, m.features, m.language_feature);
  const Index C = m.classes.size();
  Tensord logits({C});
  for (Index j = 0; j < C; ++j) logits[j] = m.b.value()[j];
  for (const auto& [id, val] : feats)
    for (Index j = 0; j < C; ++j) logits[j] += val * m.w.value()(id, j);

  double mx = logits[0];
  Index arg = 0;
  for (Index j = 1; j < C; ++j)
    if (logits[j] > mx) {
      mx = logits[j];
      arg = j;
    }
  double z = 0.0;
  for (Index j = 0; j < C; ++j) z += std::exp(logits[j] - mx);
  MaxEntPrediction out;
  out.label = m.classes.name(arg);
  out.probs = Tensord({C});
  for (Index j = 0; j < C; ++j) out.probs[j] = std::exp(logits[j] - mx) / z;
  return out;
}

MaxEntPrediction predict_domain(const MaxEntModel& m,
                                const AnnotatedUtterance& u) {
  return predict_maxent(m, u);
}

Var sparse_crf_emissions(const SparseCrfModel& m,
                         const std::vector<std::string>& tokens) {
  if (tokens.empty())
    throw DimensionError("sparse_crf_emissions: no tokens");
  std::vector<Var> rows;
  rows.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t)
    rows.push_back(sparse_combine(m.w, featurize_ner_token(tokens, t, m.features)));
  return stack_rows(rows);
}

Var sparse_crf_nll(const SparseCrfModel& m, const AnnotatedUtterance& u) {
  std::vector<Index> gold;
  gold.reserve(u.slots.size());
  for (const std::string& s : u.slots) gold.push_back(m.labels.at(s));
  return crf_nll(sparse_crf_emissions(m, u.tokens), m.transitions, gold);
}

double sparse_crf_loss(const SparseCrfModel& m, const Corpus& corpus) {
  if (corpus.empty()) throw ConfigError("sparse_crf_loss: empty corpus");
  double total = 0.0;
  for (const AnnotatedUtterance& u : corpus)
    total += sparse_crf_nll(m, u).value()[0];
  total /= static_cast<double>(corpus.size());
  if (m.lambda > 0.0) {
    double sq = 0.0;
    for (Index i = 0; i < m.w.value().size(); ++i)
      sq += m.w.value()[i] * m.w.value()[i];
    total += m.lambda / 2.0 * sq;
  }
  return total;
}

SparseCrfModel train_sparse_crf(const Corpus& corpus,
                                const SparseCrfConfig& cfg) {
  if (corpus.empty()) throw ConfigError("train_sparse_crf: empty corpus");
  check_sgd_config(cfg.lambda, cfg.epochs, cfg.lr, cfg.batch_size);

  SparseCrfModel m;
  m.lambda = cfg.lambda;
  m.labels = build_vocab(corpus).slot_labels;
  if (m.labels.size() < 2)
    throw ConfigError("train_sparse_crf: corpus has no slot label besides O");
  const Index L = m.labels.size();

  // Featurize every position once, growing the dictionary.
  std::vector<std::vector<SparseFeats>> feats(corpus.size());
  std::vector<std::vector<Index>> gold(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const AnnotatedUtterance& u = corpus[i];
    feats[i].reserve(u.tokens.size());
    for (std::size_t t = 0; t < u.tokens.size(); ++t)
      feats[i].push_back(featurize_ner_token(u.tokens, t, m.features, true));
    gold[i].reserve(u.slots.size());
    for (const std::string& s : u.slots) gold[i].push_back(m.labels.at(s));
  }

  m.w = Var::leaf(Tensord::zeros({m.features.size(), L}));
  m.transitions = Var::leaf(make_crf_transitions(L));

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<Batch> batches =
        make_batches(corpus, cfg.batch_size,
                     cfg.seed + static_cast<std::uint64_t>(epoch), false);
    for (const Batch& batch : batches) {
      Tape tape;
      {
        TapeScope scope(tape);
        Var nll_sum;
        for (Index id : batch.utt_ids) {
          const auto i = static_cast<std::size_t>(id);
          std::vector<Var> rows;
          rows.reserve(feats[i].size());
          for (const SparseFeats& f : feats[i])
            rows.push_back(sparse_combine(m.w, f));
          Var nll = crf_nll(stack_rows(rows), m.transitions, gold[i]);
          nll_sum = nll_sum.defined() ? add(nll_sum, nll) : nll;
        }
        Var loss =
            scale(nll_sum, 1.0 / static_cast<double>(batch.utt_ids.size()));
        if (m.lambda > 0.0)
          loss = add(loss, scale(sum(mul(m.w, m.w)), m.lambda / 2.0));
        backward(loss);
      }
      sgd_step({m.w, m.transitions}, cfg.lr);
    }
  }
  return m;
}

std::vector<std::string> sparse_crf_tags(const SparseCrfModel& m,
                                         const std::vector<std::string>& tokens,
                                         bool constrain_bio) {
  if (tokens.empty()) throw DimensionError("sparse_crf_tags: no tokens");
  const Index L = m.labels.size();
  Tensord emis({static_cast<Index>(tokens.size()), L});
  for (std::size_t t = 0; t < tokens.size(); ++t)
    for (const auto& [id, val] : featurize_ner_token(tokens, t, m.features))
      for (Index j = 0; j < L; ++j) emis(static_cast<Index>(t), j) += val * m.w.value()(id, j);
  ViterbiResult v = crf_viterbi(emis, m.transitions.value(), constrain_bio,
                                m.labels.items());
  std::vector<std::string> out;
  out.reserve(v.tags.size());
  for (Index y : v.tags) out.push_back(m.labels.name(y));
  return out;
}

}  // namespace mlnlu
