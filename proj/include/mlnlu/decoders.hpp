#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mlnlu/autodiff.hpp"

namespace mlnlu {

/// Linear-chain CRF head. Transitions live in an (L+2)x(L+2) matrix whose
/// last two states are the synthetic START (row/col L) and STOP (row/col
/// L+1); cells into START and out of STOP are -inf and are never read by
/// the recursions, so they stay -inf through training.
struct CrfHead {
  Index n_labels = 0;  // L, real slot labels
  Index d_ctx = 0;     // encoder output width feeding the projection
  Var proj_w;          // {d_ctx, L} emission projection
  Var proj_b;          // {L}
  Var transitions;     // {L+2, L+2}
};

constexpr Index crf_start(Index n_labels) { return n_labels; }
constexpr Index crf_stop(Index n_labels) { return n_labels + 1; }

/// MLP intent classifier over the encoder context. The utterance vector is
/// [final forward state; first backward state], or the mean over real rows
/// when mean_pool is set.
struct MlpIcHead {
  Index d_ctx = 0;
  Index d_hidden = 0;
  Index n_intents = 0;
  double dropout_rate = 0.0;
  bool mean_pool = false;
  Var w1;  // {d_hidden, d_ctx}
  Var b1;  // {d_hidden}
  Var w2;  // {n_intents, d_hidden}
  Var b2;  // {n_intents}
};

/// One decoded utterance: intent plus BIO slot tags with their scores.
struct UtterancePrediction {
  std::string domain;
  std::string intent;
  std::vector<std::string> slot_tags;
  double intent_score = 0.0;  // log-softmax of the chosen intent
  double path_score = 0.0;    // unnormalized Viterbi path score
};

/// Fresh transition matrix: zeros in every readable cell, -inf into START
/// and out of STOP.
Tensord make_crf_transitions(Index n_labels);

CrfHead make_crf_head(Index d_ctx, Index n_labels, Rng& rng);
MlpIcHead make_mlp_ic_head(Index d_ctx, Index d_hidden, Index n_intents,
                           double dropout_rate, bool mean_pool, Rng& rng);

/// Emission scores for the first n_real context rows: context * proj_w + b.
Var crf_emissions(const CrfHead& head, const Var& context, Index n_real);

/// log Z over all L^T tag paths, forward recursion with logsumexp.
/// Path score = trans(START,y_0) + sum_t emis(t,y_t) + sum_t trans(y_{t-1},y_t)
/// + trans(y_{T-1},STOP).
Var crf_log_partition(const Var& emissions, const Var& transitions);

/// Score of one specific tag path (same score definition as the partition).
Var crf_gold_score(const Var& emissions, const Var& transitions,
                   const std::vector<Index>& tags);

/// log Z - score(gold); non-negative, differentiable in emissions and
/// transitions.
Var crf_nll(const Var& emissions, const Var& transitions,
            const std::vector<Index>& tags);

struct ViterbiResult {
  std::vector<Index> tags;
  double score = 0.0;
};

/// Best-scoring path; ties broken toward the lowest label index at every
/// backpointer and at the final state. constrain_bio adds -inf to
/// transitions that would produce an invalid BIO sequence (requires the
/// label names to know which I-X follows which B-X).
ViterbiResult crf_viterbi(const Tensord& emissions, const Tensord& transitions,
                          bool constrain_bio = false,
                          const std::vector<std::string>& labels = {});

/// Per-position tag posteriors via forward-backward; each row sums to 1.
Tensord crf_marginals(const Tensord& emissions, const Tensord& transitions);

/// Intent logits from the first n_real rows of the context matrix.
Var ic_logits(const MlpIcHead& head, const Var& context, Index n_real,
              Mode mode, Rng* drop_rng = nullptr);

std::vector<Var> crf_params(const CrfHead& head);
std::vector<Var> ic_params(const MlpIcHead& head);
void set_crf_freeze(CrfHead& head, bool frozen);
void set_ic_freeze(MlpIcHead& head, bool frozen);

}  // namespace mlnlu
