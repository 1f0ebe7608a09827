#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mlnlu/autodiff.hpp"
#include "mlnlu/data.hpp"
#include "mlnlu/decoders.hpp"

namespace mlnlu {

/// Sparse feature vector: (feature id, value) pairs, ids from a Vocab used
/// as the feature dictionary. Aggregated per id, first-occurrence order.
using SparseFeats = std::vector<std::pair<Index, double>>;

/// Which utterance field a MaxEnt model classifies. Domain adds a LANG=
/// feature (switchable) since domain classifiers train on mixed-language
/// data.
enum class FeatureScheme { Domain, Intent };

/// Token unigrams (U=), adjacent bigrams (B=, '_'-joined), a length bucket
/// (LEN=, exact to 5 then "6-10"/"11+"), and for the Domain scheme the
/// language tag (LANG=) unless language_feature is off. grow=true registers
/// unseen features in dict; grow=false drops them.
SparseFeats featurize_utterance(const AnnotatedUtterance& u,
                                FeatureScheme scheme, Vocab& dict, bool grow,
                                bool language_feature = true);
/// Non-growing lookup against a frozen dictionary.
SparseFeats featurize_utterance(const AnnotatedUtterance& u,
                                FeatureScheme scheme, const Vocab& dict,
                                bool language_feature = true);

/// Features for tagging position `pos`: current word identity (W=) and its
/// ASCII-lowercased form (LOW=), neighbor identities (PREV=/NEXT= with
/// <s>/</s> boundary markers), codepoint prefixes/suffixes up to length 3
/// (PRE1..3=/SUF1..3=), plus CAP=true / DIG=true flags.
SparseFeats featurize_ner_token(const std::vector<std::string>& tokens,
                                std::size_t pos, Vocab& dict, bool grow);
/// Non-growing lookup against a frozen dictionary.
SparseFeats featurize_ner_token(const std::vector<std::string>& tokens,
                                std::size_t pos, const Vocab& dict);

/// Multinomial logistic regression over sparse features.
struct MaxEntModel {
  Vocab features;
  Vocab classes;
  FeatureScheme scheme = FeatureScheme::Domain;
  bool language_feature = true;
  double lambda = 0.0;
  Var w;  // {|features|, |classes|}
  Var b;  // {|classes|}, unregularized
};

struct MaxEntConfig {
  double lambda = 1e-4;
  Index epochs = 30;
  double lr = 0.5;
  Index batch_size = 16;
  std::uint64_t seed = 0;
  bool language_feature = true;
};

/// Mean cross-entropy over the batch plus lambda/2 * ||w||^2 as one graph.
Var maxent_batch_loss(const MaxEntModel& m,
                      const std::vector<std::pair<SparseFeats, Index>>& batch);

/// Mini-batch gradient descent on the regularized multinomial logistic
/// loss; the feature dictionary and class inventory are built from the
/// corpus. Needs >= 2 distinct classes.
MaxEntModel train_maxent(const Corpus& corpus, FeatureScheme scheme,
                         const MaxEntConfig& cfg);

/// Full-corpus training objective (mean regularized cross-entropy).
double maxent_loss(const MaxEntModel& m, const Corpus& corpus);

struct MaxEntPrediction {
  std::string label;
  Tensord probs;  // {|classes|}, sums to 1
};

/// Argmax class with posteriors; ties break toward the lowest class index.
MaxEntPrediction predict_maxent(const MaxEntModel& m,
                                const AnnotatedUtterance& u);
/// Domain-classifier entry point (the model's classes are domains).
MaxEntPrediction predict_domain(const MaxEntModel& m,
                                const AnnotatedUtterance& u);

/// Linear-chain CRF whose emissions are sparse-feature scores, sharing the
/// dense CRF math (partition, NLL, Viterbi).
struct SparseCrfModel {
  Vocab features;
  Vocab labels;  // includes "O"
  double lambda = 0.0;
  Var w;            // {|features|, |labels|}
  Var transitions;  // {|labels|+2, |labels|+2}, unregularized
};

struct SparseCrfConfig {
  double lambda = 1e-4;
  Index epochs = 40;
  double lr = 0.2;
  Index batch_size = 8;
  std::uint64_t seed = 0;
};

/// Emission matrix {T, |labels|} for a token sequence (non-growing lookups).
Var sparse_crf_emissions(const SparseCrfModel& m,
                         const std::vector<std::string>& tokens);

/// Sequence NLL of the utterance's gold tags under the model.
Var sparse_crf_nll(const SparseCrfModel& m, const AnnotatedUtterance& u);

/// Mean NLL over the corpus plus lambda/2 * ||w||^2.
double sparse_crf_loss(const SparseCrfModel& m, const Corpus& corpus);

/// Mini-batch gradient descent on mean sequence NLL + L2 on the feature
/// weights. Needs at least one slot label besides O.
SparseCrfModel train_sparse_crf(const Corpus& corpus,
                                const SparseCrfConfig& cfg);

/// Viterbi tags as label strings (BIO-constrained by default).
std::vector<std::string> sparse_crf_tags(const SparseCrfModel& m,
                                         const std::vector<std::string>& tokens,
                                         bool constrain_bio = true);

}  // namespace mlnlu
