#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlnlu/checkpoint.hpp"
#include "mlnlu/data.hpp"
#include "mlnlu/decoders.hpp"
#include "mlnlu/embeddings.hpp"
#include "mlnlu/encoder.hpp"
#include "mlnlu/maxent.hpp"

namespace mlnlu {

// ---- the neural system -----------------------------------------------------
// Full assembly: shared token embedder (word table + char CNN) -> 2-layer
// biLSTM -> CRF slot head and MLP intent head, with a separately trained
// MaxEnt domain classifier on the side.

struct DnnConfig {
  EmbeddingConfig emb;
  Index hidden = 64;     // LSTM units per direction
  Index ic_hidden = 64;  // intent MLP hidden width
  double dropout = 0.2;
  bool mean_pool = false;  // intent pooling: mean over tokens vs end states

  Index context_dim() const { return 2 * hidden; }
};

struct DnnModel {
  DnnConfig cfg;
  VocabularyBundle vocab;
  Embedder emb;
  BiLstmEncoder encoder;
  CrfHead crf;
  MlpIcHead ic;
  std::optional<MaxEntModel> dc;  // domain classifier; absent until trained
};

/// Freshly initialized model over the given vocabularies. A nonempty
/// vec_path first extends vocab.words (and vocab.chars) with every token in
/// the vector file and then fills the word table from it, so evaluation-time
/// tokens covered by the pretrained vectors are never unknown words.
DnnModel make_dnn_model(const DnnConfig& cfg, VocabularyBundle vocab,
                        const std::string& vec_path, std::uint64_t seed);

/// Sets the dropout rate everywhere it lives (config, encoder, intent head).
void set_dropout(DnnModel& m, double rate);

/// {n_tokens, 2*hidden} context matrix for one utterance. Train mode needs
/// drop_rng when the model's dropout rate is nonzero.
Var encode_utterance(const DnnModel& m, const std::vector<std::string>& tokens,
                     Mode mode, Rng* drop_rng = nullptr);

/// Per-task losses for one utterance. A task whose gold labels are not all
/// representable in the model's inventories is skipped (has_* stays false):
/// fine-tuning a transferred decoder on a corpus with novel labels drops
/// exactly those gold terms instead of crashing.
struct UtteranceLosses {
  Var ic;   // cross entropy; defined iff has_ic
  Var ner;  // sequence NLL; defined iff has_ner
  bool has_ic = false;
  bool has_ner = false;
};
UtteranceLosses utterance_losses(const DnnModel& m,
                                 const AnnotatedUtterance& u, Mode mode,
                                 Rng* drop_rng = nullptr);

/// Inference: MaxEnt domain (empty string if the classifier is untrained),
/// argmax intent with its log-probability, BIO-constrained Viterbi slots
/// with the path score.
UtterancePrediction predict_utterance(const DnnModel& m,
                                      const AnnotatedUtterance& u);
std::vector<UtterancePrediction> predict_corpus(const DnnModel& m,
                                                const Corpus& corpus);

/// Trainable handles in a fixed order: embedder, encoder, CRF head, intent
/// head. The domain classifier is excluded (it trains by its own loop).
std::vector<Var> dnn_params(const DnnModel& m);
std::vector<std::pair<std::string, Var>> dnn_named_params(const DnnModel& m);

Checkpoint dnn_to_checkpoint(const DnnModel& m,
                             const nlohmann::json& provenance);
DnnModel dnn_from_checkpoint(const Checkpoint& cp);

/// Copies same-named checkpoint arrays into an existing model's parameters.
/// A shape disagreement raises TransferError naming the array.
void apply_checkpoint_arrays(DnnModel& m, const Checkpoint& cp);

// ---- decoder-vocabulary surgery ---------------------------------------------
// Mitigation for transferring decoders onto a corpus with novel labels:
// output layers grow by freshly initialized rows while every existing
// parameter keeps its value (and the CRF keeps its boundary -inf pattern).

MlpIcHead expand_ic_head(const MlpIcHead& head, Index n_new_intents, Rng& rng);
CrfHead expand_crf_head(const CrfHead& head, Index n_new_labels, Rng& rng);

// ---- the classical baseline --------------------------------------------------
// MaxEnt domain classifier + MaxEnt intent classifier + sparse-feature CRF
// slot tagger, all on hand-crafted features.

struct MaxEntSystemConfig {
  MaxEntConfig dc;
  MaxEntConfig ic;
  SparseCrfConfig ner;
  std::uint64_t seed = 0;  // reseeds the three component configs
};

struct MaxEntSystem {
  MaxEntModel dc;
  MaxEntModel ic;
  SparseCrfModel ner;
};

MaxEntSystem train_maxent_system(const Corpus& corpus, MaxEntSystemConfig cfg);
UtterancePrediction predict_maxent_system(const MaxEntSystem& s,
                                          const AnnotatedUtterance& u);
std::vector<UtterancePrediction> predict_maxent_corpus(const MaxEntSystem& s,
                                                       const Corpus& corpus);

Checkpoint maxent_system_to_checkpoint(const MaxEntSystem& s,
                                       const nlohmann::json& provenance);
MaxEntSystem maxent_system_from_checkpoint(const Checkpoint& cp);

}  // namespace mlnlu
