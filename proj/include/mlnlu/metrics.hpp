#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mlnlu/data.hpp"
#include "mlnlu/decoders.hpp"

namespace mlnlu {

// ---- chunking ----------------------------------------------------------

/// Exact-boundary, exact-type slot span decoded from a BIO sequence.
/// Token span is [begin, end], inclusive.
struct Chunk {
  std::string type;
  Index begin = 0;
  Index end = 0;

  bool operator==(const Chunk&) const = default;
  bool operator<(const Chunk& o) const {
    return std::tie(begin, end, type) < std::tie(o.begin, o.end, o.type);
  }
};

/// Decodes BIO tags into chunks. With repair_stray_i, an I-X that does not
/// continue an open X chunk starts a new one (unconstrained decoders can
/// emit such sequences); without it, stray I-X raises ValidationError.
std::vector<Chunk> bio_chunks(const std::vector<std::string>& tags,
                              bool repair_stray_i = true);

/// Inverse of bio_chunks for valid, sorted, non-overlapping chunks.
std::vector<std::string> chunks_to_bio(const std::vector<Chunk>& chunks,
                                       Index len);

// ---- the four headline metrics ----------------------------------------

enum class LabelField { Domain, Intent };

/// Exact-match fraction of the chosen label field.
double label_accuracy(const std::vector<UtterancePrediction>& predictions,
                      const Corpus& gold, LabelField field);

/// Micro-averaged chunk precision/recall/F1 pooled over the whole set.
/// F1 is 0 whenever TP is 0 (no partial credit, no 0/0 ambiguity).
struct SlotPrf {
  Index tp = 0;
  Index fp = 0;
  Index fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const SlotPrf&) const = default;
};
SlotPrf slot_f1_micro(const std::vector<UtterancePrediction>& predictions,
                      const Corpus& gold, bool repair_stray_i = true);

/// Fraction of utterances whose domain, intent, and complete slot tag
/// sequence all match exactly.
double frame_accuracy(const std::vector<UtterancePrediction>& predictions,
                      const Corpus& gold);

// ---- aggregate reports -------------------------------------------------

struct MetricsBlock {
  Index utterances = 0;
  double domain_accuracy = 0.0;
  double intent_accuracy = 0.0;
  SlotPrf slots;
  double frame_accuracy = 0.0;

  bool operator==(const MetricsBlock&) const = default;
};

struct EvalReport {
  std::string model_id;
  std::string test_digest;  // hex corpus digest of the evaluation set
  double runtime_seconds = 0.0;
  MetricsBlock overall;
  std::map<std::string, MetricsBlock> per_language;

  bool operator==(const EvalReport&) const = default;
};

/// All four metrics, overall and split by gold language tag.
EvalReport evaluate(const std::vector<UtterancePrediction>& predictions,
                    const Corpus& gold, const std::string& model_id,
                    double runtime_seconds = 0.0);

/// Order-sensitive content digest of a corpus (16 hex chars); reports carry
/// it so comparisons across different test sets can be rejected.
std::string corpus_digest(const Corpus& corpus);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

// ---- baseline comparison ------------------------------------------------

/// One metric's baseline/candidate pair. When the baseline value is 0 the
/// change and ratio are undefined and `defined` is false.
struct MetricChange {
  double baseline = 0.0;
  double candidate = 0.0;
  double change_pct = 0.0;  // (candidate - baseline) / baseline * 100
  double ratio = 0.0;       // candidate / baseline
  bool defined = true;
};

struct ComparisonReport {
  std::string baseline_id;
  std::string candidate_id;
  std::string test_digest;
  Index runs = 1;  // aggregated run pairs
  // keys: domain_accuracy, intent_accuracy, slot_f1, frame_accuracy
  std::map<std::string, MetricChange> metrics;
};

/// Relative change and normalized ratio per metric. Reports with different
/// test digests raise ValidationError.
ComparisonReport compare(const EvalReport& baseline,
                         const EvalReport& candidate);

/// Multi-run aggregation: arithmetic mean of each metric over the runs on
/// each side first, then change/ratio of the means. All reports must share
/// one test digest.
ComparisonReport compare_mean(const std::vector<EvalReport>& baselines,
                              const std::vector<EvalReport>& candidates);

std::string comparison_to_json(const ComparisonReport& c);
/// Aligned fixed-width text table, one row per metric.
std::string comparison_table(const ComparisonReport& c);

// ---- runtime benchmarking ----------------------------------------------

struct BenchEntry {
  std::string model_id;
  std::vector<double> run_seconds;
  double mean_seconds = 0.0;
  double relative = 0.0;  // mean / reference mean
};

struct BenchReport {
  std::string reference_id;
  std::vector<BenchEntry> entries;
};

/// Wall-clock timing of fn() over `runs` repetitions (runs >= 1).
BenchEntry bench_runtime(const std::string& model_id,
                         const std::function<void()>& fn, Index runs);

/// Fills every entry's `relative` from the named reference entry's mean.
BenchReport make_bench_report(const std::string& reference_id,
                              std::vector<BenchEntry> entries);

std::string bench_to_json(const BenchReport& b);
std::string bench_table(const BenchReport& b);

}  // namespace mlnlu
