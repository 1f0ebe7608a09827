#include "mlnlu/training.hpp"

#include <cmath>
#include <set>

namespace mlnlu {

using nlohmann::json;

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(seed ^ fnv1a64(label));
}

}  // namespace

void validate_training_config(const TrainingConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.beta < 0.0)
    throw ConfigError("loss weights must be >= 0");
  if (cfg.alpha == 0.0 && cfg.beta == 0.0)
    throw ConfigError("at least one loss weight must be positive");
  if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
  if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.valid_ratio < 0.0 || cfg.valid_ratio >= 1.0)
    throw ConfigError("valid_ratio must be in [0, 1)");
  if (cfg.unfreeze_steps < 0)
    throw ConfigError("unfreeze_steps must be >= 0");
  if (cfg.vlr_embeddings_only && cfg.unfreeze_steps < 1)
    throw ConfigError("vlr_embeddings_only needs unfreeze_steps >= 1");
}

double vlr_multiplier(Index step, Index unfreeze_steps) {
  if (unfreeze_steps <= 0) return 1.0;
  if (step <= 0) return 0.0;
  if (step >= unfreeze_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(unfreeze_steps);
}

// ---- optimizer -----------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr_in, double beta1, double beta2,
           double eps)
    : lr(lr_in),
      params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Var& p : params_) {
    m_.push_back(Tensord::zeros(p.shape()));
    v_.push_back(Tensord::zeros(p.shape()));
  }
  t_.assign(params_.size(), 0);
  ramped_.assign(params_.size(), false);
}

void Adam::set_ramped(std::vector<bool> ramped) {
  if (ramped.size() != params_.size())
    throw ConfigError("ramp mask size does not match the parameter list");
  ramped_ = std::move(ramped);
}

void Adam::zero_grad() {
  for (Var& p : params_) p.clear_grad();
}

void Adam::step(double ramp_multiplier) {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.requires_grad() || !p.grad()) continue;  // moments do not advance
    const auto g = p.grad()->array();
    const Index t = ++t_[i];
    m_[i].array() = beta1_ * m_[i].array() + (1.0 - beta1_) * g;
    v_[i].array() = beta2_ * v_[i].array() + (1.0 - beta2_) * g.square();
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    const double eff = lr * (ramped_[i] ? ramp_multiplier : 1.0);
    p.value().array() -=
        eff * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

double clip_global_norm(const std::vector<Var>& params, double max_norm) {
  double sq = 0.0;
  for (const Var& p : params)
    if (p.requires_grad() && p.grad()) sq += p.grad()->array().square().sum();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const Var& p : params)
      if (p.requires_grad() && p.grad()) p.node()->grad->array() *= s;
  }
  return norm;
}

// ---- loss evaluation ---------------------------------------------------------

LossEval corpus_loss(const DnnModel& m, const Corpus& corpus, double alpha,
                     double beta) {
  LossEval ev;
  double ic_sum = 0.0, ner_sum = 0.0;
  for (const AnnotatedUtterance& u : corpus) {
    const UtteranceLosses ul = utterance_losses(m, u, Mode::Infer, nullptr);
    if (ul.has_ic) {
      ic_sum += ul.ic.value()[0];
      ++ev.n_ic;
    }
    if (ul.has_ner) {
      ner_sum += ul.ner.value()[0];
      ++ev.n_ner;
    }
  }
  ev.ic = ev.n_ic ? ic_sum / static_cast<double>(ev.n_ic) : 0.0;
  ev.ner = ev.n_ner ? ner_sum / static_cast<double>(ev.n_ner) : 0.0;
  ev.total = alpha * ev.ic + beta * ev.ner;
  return ev;
}

std::pair<Corpus, Corpus> training_split(const Corpus& corpus,
                                         const TrainingConfig& cfg) {
  if (cfg.valid_ratio <= 0.0 || corpus.size() < 2)
    return {corpus, Corpus{}};
  auto parts = split_train_valid(corpus, 1.0 - cfg.valid_ratio,
                                 sub_seed(cfg.seed, "train.split"));
  if (parts.first.empty())
    throw ConfigError("valid_ratio leaves no training data");
  return parts;
}

// ---- the joint loop -----------------------------------------------------------

namespace {

/// Fits the domain classifier on the full corpus; a corpus with fewer than
/// two distinct domains gets none (predictions then leave the domain empty).
void fit_domain_classifier(DnnModel& model, const Corpus& corpus,
                           std::uint64_t seed) {
  std::set<std::string> domains;
  for (const AnnotatedUtterance& u : corpus) domains.insert(u.domain);
  if (domains.size() < 2) {
    model.dc.reset();
    return;
  }
  MaxEntConfig dc_cfg;
  dc_cfg.seed = sub_seed(seed, "train.dc");
  model.dc = train_maxent(corpus, FeatureScheme::Domain, dc_cfg);
}

TrainHistory run_training(DnnModel& model, const Corpus& corpus,
                          const TrainingConfig& cfg,
                          const std::vector<bool>& ramp,
                          Index unfreeze_steps) {
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  auto parts = training_split(corpus, cfg);
  const Corpus& train_part = parts.first;
  const Corpus& valid_part = parts.second;
  const bool has_valid = !valid_part.empty();

  std::vector<Var> params = dnn_params(model);
  Adam opt(params, cfg.lr);
  if (!ramp.empty()) opt.set_ramped(ramp);

  // Which task terms each utterance can contribute, given the decoder
  // inventories (gold labels outside them are skipped, not errors).
  std::vector<char> rep_ic(train_part.size()), rep_ner(train_part.size());
  for (std::size_t i = 0; i < train_part.size(); ++i) {
    const AnnotatedUtterance& u = train_part[i];
    rep_ic[i] = model.vocab.intents.find(u.intent).has_value() ? 1 : 0;
    bool ok = true;
    for (const std::string& s : u.slots)
      if (!model.vocab.slot_labels.find(s)) {
        ok = false;
        break;
      }
    rep_ner[i] = ok ? 1 : 0;
  }

  Rng drop_rng = Rng::stream(cfg.seed, "train.dropout");
  TrainHistory h;
  std::vector<Tensord> best_values;
  Index since_best = 0;

  for (Index epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto batches = make_batches(
        train_part, cfg.batch_size,
        sub_seed(cfg.seed, "train.epoch." + std::to_string(epoch)), false);
    double ep_ic_sum = 0.0, ep_ner_sum = 0.0;
    Index ep_n_ic = 0, ep_n_ner = 0;

    for (const Batch& b : batches) {
      Index n_ic = 0, n_ner = 0;
      for (Index id : b.utt_ids) {
        n_ic += rep_ic[static_cast<std::size_t>(id)];
        n_ner += rep_ner[static_cast<std::size_t>(id)];
      }
      opt.zero_grad();
      double ic_sum = 0.0, ner_sum = 0.0;
      for (Index id : b.utt_ids) {
        const AnnotatedUtterance& u = train_part[static_cast<std::size_t>(id)];
        Tape tape;
        TapeScope scope(tape);
        const UtteranceLosses ul =
            utterance_losses(model, u, Mode::Train, &drop_rng);
        // Terms are scaled inside the graph so the gradients accumulated
        // over the batch equal those of alpha * mean_ic + beta * mean_ner.
        Var total;
        if (ul.has_ic) {
          ic_sum += ul.ic.value()[0];
          if (cfg.alpha != 0.0)
            total = scale(ul.ic, cfg.alpha / static_cast<double>(n_ic));
        }
        if (ul.has_ner) {
          ner_sum += ul.ner.value()[0];
          if (cfg.beta != 0.0) {
            Var term = scale(ul.ner, cfg.beta / static_cast<double>(n_ner));
            total = total.defined() ? add(total, term) : term;
          }
        }
        if (total.defined()) tape.backward(total, 1.0);
      }
      clip_global_norm(params, cfg.grad_clip);
      const double ramp_mult = vlr_multiplier(opt.steps(), unfreeze_steps);
      opt.step(ramp_mult);

      BatchRecord rec;
      rec.epoch = epoch;
      rec.n_ic = n_ic;
      rec.n_ner = n_ner;
      rec.l_ic = n_ic ? ic_sum / static_cast<double>(n_ic) : 0.0;
      rec.l_ner = n_ner ? ner_sum / static_cast<double>(n_ner) : 0.0;
      rec.l_total = cfg.alpha * rec.l_ic + cfg.beta * rec.l_ner;
      rec.ramp = ramp_mult;
      h.steps.push_back(rec);
      ep_ic_sum += ic_sum;
      ep_ner_sum += ner_sum;
      ep_n_ic += n_ic;
      ep_n_ner += n_ner;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_ic = ep_n_ic ? ep_ic_sum / static_cast<double>(ep_n_ic) : 0.0;
    er.train_ner = ep_n_ner ? ep_ner_sum / static_cast<double>(ep_n_ner) : 0.0;
    er.train_total = cfg.alpha * er.train_ic + cfg.beta * er.train_ner;
    double monitored = er.train_total;
    if (has_valid) {
      const LossEval ev = corpus_loss(model, valid_part, cfg.alpha, cfg.beta);
      er.has_valid = true;
      er.valid_ic = ev.ic;
      er.valid_ner = ev.ner;
      er.valid_total = ev.total;
      monitored = ev.total;
    }
    if (monitored < h.best_monitored) {
      h.best_monitored = monitored;
      h.best_epoch = epoch;
      er.improved = true;
      since_best = 0;
      best_values.clear();
      best_values.reserve(params.size());
      for (const Var& p : params) best_values.push_back(p.value());
    } else {
      ++since_best;
    }
    h.epochs.push_back(er);
    if (since_best >= cfg.patience) break;
  }

  if (!best_values.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i].value() = best_values[i];
  h.optimizer_steps = opt.steps();
  return h;
}

}  // namespace

TrainResult train_dnn(const Corpus& corpus, const DnnConfig& dnn_cfg,
                      const TrainingConfig& cfg, const std::string& vec_path) {
  validate_training_config(cfg);
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  VocabularyBundle vocab = build_vocab(corpus);
  DnnModel model = make_dnn_model(dnn_cfg, std::move(vocab), vec_path, cfg.seed);
  // Initial training keeps the word table at its (pretrained or keyed-random)
  // starting point; the char CNN and the rest of the stack train.
  set_freeze(model.emb, true, EmbedScope::WordTable);
  TrainHistory h = run_training(model, corpus, cfg, {}, 0);
  fit_domain_classifier(model, corpus, cfg.seed);
  return {std::move(model), std::move(h)};
}

// ---- transfer -----------------------------------------------------------------

std::string transfer_mode_name(TransferMode mode) {
  switch (mode) {
    case TransferMode::None: return "none";
    case TransferMode::EncDec: return "encdec";
    case TransferMode::Enc: return "enc";
    case TransferMode::EncVlr: return "enc-vlr";
  }
  throw ConfigError("unknown transfer mode");
}

namespace {

TransferResult adapt_model(const Checkpoint& source, const Corpus& target,
                           TransferMode mode, bool expand_vocab,
                           const std::string& vec_path, std::uint64_t seed) {
  DnnModel m = dnn_from_checkpoint(source);
  const VocabularyBundle tv = build_vocab(target);

  // Novel target words get rows from the vector file (aligned space) or from
  // the keyed-random fallback; rows the source trained keep their values.
  const Index old_words = m.vocab.words.size();
  for (const std::string& w : tv.words.items()) m.vocab.words.add(w);
  const Index all_words = m.vocab.words.size();
  if (all_words > old_words) {
    const std::uint64_t word_seed = sub_seed(seed, "model.word");
    const AlignedEmbeddingTable donor =
        vec_path.empty()
            ? make_random_table(m.vocab.words, m.cfg.emb.d_word, word_seed)
            : load_aligned_vectors(vec_path, m.vocab.words, m.cfg.emb.d_word,
                                   word_seed);
    Tensord rows({all_words, m.cfg.emb.d_word});
    rows.mat().topRows(old_words) = m.emb.word.rows.value().mat();
    rows.mat().bottomRows(all_words - old_words) =
        donor.rows.value().mat().bottomRows(all_words - old_words);
    m.emb.word.rows = Var::leaf(std::move(rows));
  }

  const Index old_chars = m.vocab.chars.size();
  for (const std::string& c : tv.chars.items()) m.vocab.chars.add(c);
  const Index all_chars = m.vocab.chars.size();
  if (all_chars > old_chars) {
    Rng cnn_rng = Rng::stream(seed, "model.cnn");
    const CharCnn donor = make_char_cnn(all_chars, m.cfg.emb, cnn_rng);
    Tensord table({all_chars, m.cfg.emb.d_char});
    table.mat().topRows(old_chars) = m.emb.cnn.char_table.value().mat();
    table.mat().bottomRows(all_chars - old_chars) =
        donor.char_table.value().mat().bottomRows(all_chars - old_chars);
    m.emb.cnn.char_table = Var::leaf(std::move(table));
  }

  std::vector<std::string> novel_intents, novel_slots;
  for (const std::string& s : tv.intents.items())
    if (!m.vocab.intents.find(s)) novel_intents.push_back(s);
  for (const std::string& s : tv.slot_labels.items())
    if (!m.vocab.slot_labels.find(s)) novel_slots.push_back(s);

  TransferResult r;
  if (mode == TransferMode::EncDec) {
    if (expand_vocab) {
      Rng ic_rng = Rng::stream(seed, "transfer.ic");
      m.ic = expand_ic_head(m.ic, static_cast<Index>(novel_intents.size()),
                            ic_rng);
      for (const std::string& s : novel_intents) m.vocab.intents.add(s);
      Rng crf_rng = Rng::stream(seed, "transfer.crf");
      m.crf = expand_crf_head(m.crf, static_cast<Index>(novel_slots.size()),
                              crf_rng);
      for (const std::string& s : novel_slots) m.vocab.slot_labels.add(s);
    } else {
      // Source inventories stay; these labels cannot be predicted and their
      // utterances' affected loss terms are skipped during fine-tuning.
      r.novel_intents = std::move(novel_intents);
      r.novel_slot_labels = std::move(novel_slots);
    }
  } else {
    // Fresh decoders over the target inventories.
    m.vocab.intents = tv.intents;
    m.vocab.slot_labels = tv.slot_labels;
    Rng crf_rng = Rng::stream(seed, "model.crf");
    m.crf = make_crf_head(m.cfg.context_dim(), m.vocab.slot_labels.size(),
                          crf_rng);
    Rng ic_rng = Rng::stream(seed, "model.ic");
    m.ic = make_mlp_ic_head(m.cfg.context_dim(), m.cfg.ic_hidden,
                            m.vocab.intents.size(), m.cfg.dropout,
                            m.cfg.mean_pool, ic_rng);
  }
  m.vocab.domains = tv.domains;
  m.dc.reset();  // refit on the target during fine-tuning
  r.model = std::move(m);
  return r;
}

}  // namespace

TransferResult transfer_encdec(const Checkpoint& source, const Corpus& target,
                               bool expand_vocab, const std::string& vec_path,
                               std::uint64_t seed) {
  return adapt_model(source, target, TransferMode::EncDec, expand_vocab,
                     vec_path, seed);
}

TransferResult transfer_enc(const Checkpoint& source, const Corpus& target,
                            const std::string& vec_path, std::uint64_t seed) {
  return adapt_model(source, target, TransferMode::Enc, false, vec_path, seed);
}

TransferResult transfer_enc_vlr(const Checkpoint& source, const Corpus& target,
                                const std::string& vec_path,
                                std::uint64_t seed) {
  return adapt_model(source, target, TransferMode::EncVlr, false, vec_path,
                     seed);
}

TrainResult fine_tune_dnn(DnnModel model, const Corpus& corpus,
                          const TrainingConfig& cfg, TransferMode mode) {
  validate_training_config(cfg);
  std::vector<bool> ramp;
  Index unfreeze_steps = 0;
  switch (mode) {
    case TransferMode::None:
      break;  // train whatever is currently unfrozen
    case TransferMode::EncDec:
      set_freeze(model.emb, false, EmbedScope::All);
      set_encoder_freeze(model.encoder, false);
      set_crf_freeze(model.crf, false);
      set_ic_freeze(model.ic, false);
      break;
    case TransferMode::Enc:
      set_freeze(model.emb, true, EmbedScope::All);
      set_encoder_freeze(model.encoder, true);
      set_crf_freeze(model.crf, false);
      set_ic_freeze(model.ic, false);
      break;
    case TransferMode::EncVlr: {
      if (cfg.unfreeze_steps < 1)
        throw ConfigError("enc-vlr fine-tuning needs unfreeze_steps >= 1");
      set_freeze(model.emb, false, EmbedScope::All);
      set_encoder_freeze(model.encoder, cfg.vlr_embeddings_only);
      set_crf_freeze(model.crf, false);
      set_ic_freeze(model.ic, false);
      const std::size_t n_emb = embedder_params(model.emb).size();
      const std::size_t n_enc = encoder_params(model.encoder).size();
      ramp.assign(dnn_params(model).size(), false);
      const std::size_t n_ramped =
          n_emb + (cfg.vlr_embeddings_only ? 0 : n_enc);
      for (std::size_t i = 0; i < n_ramped; ++i) ramp[i] = true;
      unfreeze_steps = cfg.unfreeze_steps;
      break;
    }
  }
  TrainHistory h = run_training(model, corpus, cfg, ramp, unfreeze_steps);
  fit_domain_classifier(model, corpus, cfg.seed);
  return {std::move(model), std::move(h)};
}

// ---- history serialization -----------------------------------------------------

json history_to_json(const TrainHistory& h) {
  json steps = json::array();
  for (const BatchRecord& r : h.steps)
    steps.push_back(json{{"epoch", r.epoch},
                         {"l_ic", r.l_ic},
                         {"l_ner", r.l_ner},
                         {"l_total", r.l_total},
                         {"n_ic", r.n_ic},
                         {"n_ner", r.n_ner},
                         {"ramp", r.ramp}});
  json epochs = json::array();
  for (const EpochRecord& e : h.epochs) {
    json je{{"epoch", e.epoch},
            {"train_ic", e.train_ic},
            {"train_ner", e.train_ner},
            {"train_total", e.train_total},
            {"has_valid", e.has_valid},
            {"improved", e.improved}};
    if (e.has_valid) {
      je["valid_ic"] = e.valid_ic;
      je["valid_ner"] = e.valid_ner;
      je["valid_total"] = e.valid_total;
    }
    epochs.push_back(std::move(je));
  }
  return json{{"steps", std::move(steps)},
              {"epochs", std::move(epochs)},
              {"best_epoch", h.best_epoch},
              {"best_monitored", h.best_monitored},
              {"optimizer_steps", h.optimizer_steps}};
}

}  // namespace mlnlu
