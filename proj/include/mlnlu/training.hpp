#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mlnlu/model.hpp"

namespace mlnlu {

// ---- configuration -------------------------------------------------------

struct TrainingConfig {
  double alpha = 1.0;           // weight of the intent loss
  double beta = 1.0;            // weight of the slot loss
  Index max_epochs = 160;
  Index patience = 10;          // epochs without improvement before stopping
  double lr = 1e-3;
  Index batch_size = 16;
  std::uint64_t seed = 0;
  Index unfreeze_steps = 0;     // ramp horizon U for variable-lr transfer
  bool expand_vocab = false;    // grow source decoders for novel target labels
  bool vlr_embeddings_only = false;  // ramp embeddings only, freeze encoder
  double valid_ratio = 0.1;     // fraction held out for early stopping
  double grad_clip = 5.0;       // global L2 gradient-norm ceiling (<=0: off)
};

void validate_training_config(const TrainingConfig& cfg);

/// Learning-rate factor for ramped parameters after `step` completed
/// optimizer steps: 0 at step 0, step/U until U, then 1. U <= 0 disables
/// the ramp (factor 1).
double vlr_multiplier(Index step, Index unfreeze_steps);

// ---- optimizer -------------------------------------------------------------

/// Adam with per-parameter moments and bias-correction counters. Parameters
/// that carry no gradient after a backward pass are skipped outright: their
/// moments and counters do not advance and their values never change, so a
/// frozen or unused parameter stays bit-identical across any number of steps.
class Adam {
 public:
  explicit Adam(std::vector<Var> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  /// Marks which parameters follow the ramp multiplier passed to step().
  /// Size must match the parameter list.
  void set_ramped(std::vector<bool> ramped);

  void zero_grad();

  /// One update. Ramped parameters use lr * ramp_multiplier; the rest use lr.
  void step(double ramp_multiplier = 1.0);

  Index steps() const { return steps_; }
  double lr;

 private:
  std::vector<Var> params_;
  std::vector<Tensord> m_, v_;
  std::vector<Index> t_;  // per-parameter bias-correction counter
  std::vector<bool> ramped_;
  double beta1_, beta2_, eps_;
  Index steps_ = 0;
};

/// Scales all existing gradients so their joint L2 norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 leaves gradients untouched.
double clip_global_norm(const std::vector<Var>& params, double max_norm);

// ---- history ----------------------------------------------------------------

struct BatchRecord {
  Index epoch = 0;
  double l_ic = 0.0;    // mean intent loss over the batch's scored instances
  double l_ner = 0.0;   // mean slot loss over the batch's scored instances
  double l_total = 0.0; // alpha * l_ic + beta * l_ner, computed literally
  Index n_ic = 0;       // instances contributing an intent term
  Index n_ner = 0;      // instances contributing a slot term
  double ramp = 1.0;    // ramp multiplier applied at this step
};

struct EpochRecord {
  Index epoch = 0;
  double train_ic = 0.0;
  double train_ner = 0.0;
  double train_total = 0.0;
  bool has_valid = false;
  double valid_ic = 0.0;
  double valid_ner = 0.0;
  double valid_total = 0.0;
  bool improved = false;
};

struct TrainHistory {
  std::vector<BatchRecord> steps;
  std::vector<EpochRecord> epochs;
  Index best_epoch = 0;
  double best_monitored = std::numeric_limits<double>::infinity();
  Index optimizer_steps = 0;
};

nlohmann::json history_to_json(const TrainHistory& h);

// ---- evaluation of the loss on a corpus ------------------------------------

struct LossEval {
  double ic = 0.0;    // mean over instances with a representable intent
  double ner = 0.0;   // mean over instances with representable slots
  double total = 0.0; // alpha * ic + beta * ner
  Index n_ic = 0;
  Index n_ner = 0;
};

/// Inference-mode loss means; no tape, no dropout.
LossEval corpus_loss(const DnnModel& m, const Corpus& corpus, double alpha,
                     double beta);

/// The early-stopping split used by training: deterministic in
/// (corpus, cfg.valid_ratio, cfg.seed). Second element (validation) is empty
/// when valid_ratio leaves nothing, in which case training monitors the
/// training loss instead.
std::pair<Corpus, Corpus> training_split(const Corpus& corpus,
                                         const TrainingConfig& cfg);

// ---- training ------------------------------------------------------------------

struct TrainResult {
  DnnModel model;
  TrainHistory history;
};

/// Trains a model from scratch on the corpus: builds the vocabulary, seeds the
/// parameters, freezes the word table (pretrained or random vectors stay
/// fixed during initial training), runs the joint loop with early stopping,
/// and fits the domain classifier on the full corpus.
TrainResult train_dnn(const Corpus& corpus, const DnnConfig& dnn_cfg,
                      const TrainingConfig& cfg,
                      const std::string& vec_path = "");

// ---- transfer ---------------------------------------------------------------

enum class TransferMode { None, EncDec, Enc, EncVlr };

std::string transfer_mode_name(TransferMode mode);

/// A source model adapted to a target corpus, before fine-tuning. The novel
/// label lists name target intents / slot labels the source decoders cannot
/// emit (empty unless the mode keeps the source decoders without expansion).
struct TransferResult {
  DnnModel model;
  std::vector<std::string> novel_intents;
  std::vector<std::string> novel_slot_labels;
};

/// Keeps everything from the source, decoders included; the label
/// inventories remain the source's, so target utterances whose gold labels
/// fall outside them are skipped by the corresponding loss during
/// fine-tuning. expand_vocab instead grows both decoder heads with freshly
/// initialized rows for the novel target labels.
TransferResult transfer_encdec(const Checkpoint& source, const Corpus& target,
                               bool expand_vocab, const std::string& vec_path,
                               std::uint64_t seed);

/// Keeps embeddings and encoder (frozen during fine-tuning); fresh decoders
/// over the target inventories.
TransferResult transfer_enc(const Checkpoint& source, const Corpus& target,
                            const std::string& vec_path, std::uint64_t seed);

/// Keeps embeddings and encoder trainable under a linear learning-rate ramp;
/// fresh decoders over the target inventories train at full rate.
TransferResult transfer_enc_vlr(const Checkpoint& source, const Corpus& target,
                                const std::string& vec_path,
                                std::uint64_t seed);

/// Fine-tunes an adapted model on the target corpus. The mode fixes what
/// trains: EncDec trains everything (word table included); Enc freezes
/// embeddings and encoder; EncVlr ramps the copied stack over
/// cfg.unfreeze_steps optimizer steps (embeddings only, encoder frozen, when
/// cfg.vlr_embeddings_only). None trains whatever is currently unfrozen.
/// The domain classifier is refit on the target corpus in every mode.
TrainResult fine_tune_dnn(DnnModel model, const Corpus& corpus,
                          const TrainingConfig& cfg, TransferMode mode);

}  // namespace mlnlu
