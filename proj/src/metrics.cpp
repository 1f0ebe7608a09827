#include "mlnlu/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mlnlu {

using nlohmann::json;

// ---- chunking ----------------------------------------------------------

std::vector<Chunk> bio_chunks(const std::vector<std::string>& tags,
                              bool repair_stray_i) {
  std::vector<Chunk> chunks;
  bool open = false;
  Chunk cur;
  auto close = [&] {
    if (open) chunks.push_back(cur);
    open = false;
  };
  for (Index i = 0; i < static_cast<Index>(tags.size()); ++i) {
    const auto [kind, type] = parse_bio_tag(tags[static_cast<std::size_t>(i)]);
    if (kind == 'O') {
      close();
    } else if (kind == 'B') {
      close();
      cur = Chunk{type, i, i};
      open = true;
    } else {  // 'I'
      if (open && cur.type == type) {
        cur.end = i;
      } else if (repair_stray_i) {
        close();
        cur = Chunk{type, i, i};
        open = true;
      } else {
        throw ValidationError("stray I-" + type + " at position " +
                              std::to_string(i) + " in BIO sequence");
      }
    }
  }
  close();
  return chunks;
}

std::vector<std::string> chunks_to_bio(const std::vector<Chunk>& chunks,
                                       Index len) {
  std::vector<std::string> tags(static_cast<std::size_t>(len), "O");
  Index last_end = -1;
  for (const Chunk& c : chunks) {
    if (c.begin < 0 || c.end < c.begin || c.end >= len)
      throw ValidationError("chunk [" + std::to_string(c.begin) + "," +
                            std::to_string(c.end) + "] outside length " +
                            std::to_string(len));
    if (c.begin <= last_end)
      throw ValidationError("overlapping or unsorted chunks at position " +
                            std::to_string(c.begin));
    tags[static_cast<std::size_t>(c.begin)] = "B-" + c.type;
    for (Index i = c.begin + 1; i <= c.end; ++i)
      tags[static_cast<std::size_t>(i)] = "I-" + c.type;
    last_end = c.end;
  }
  return tags;
}

// ---- metric primitives ---------------------------------------------------

namespace {

void check_aligned(std::size_t n_pred, std::size_t n_gold) {
  if (n_pred != n_gold)
    throw DimensionError("predictions/gold length mismatch: " +
                         std::to_string(n_pred) + " vs " +
                         std::to_string(n_gold));
}

/// Accumulates every counter for a subset of utterance indices.
MetricsBlock block_over(const std::vector<UtterancePrediction>& preds,
                        const Corpus& gold, const std::vector<Index>& ids,
                        bool repair_stray_i) {
  MetricsBlock b;
  b.utterances = static_cast<Index>(ids.size());
  Index domain_ok = 0, intent_ok = 0, frame_ok = 0;
  for (Index id : ids) {
    const auto& p = preds[static_cast<std::size_t>(id)];
    const auto& g = gold[static_cast<std::size_t>(id)];
    if (p.slot_tags.size() != g.slots.size())
      throw DimensionError("utterance " + std::to_string(id) + ": predicted " +
                           std::to_string(p.slot_tags.size()) +
                           " slot tags for " + std::to_string(g.slots.size()) +
                           " tokens");
    const bool d_ok = p.domain == g.domain;
    const bool i_ok = p.intent == g.intent;
    const bool s_ok = p.slot_tags == g.slots;
    domain_ok += d_ok;
    intent_ok += i_ok;
    frame_ok += d_ok && i_ok && s_ok;

    std::vector<Chunk> pc = bio_chunks(p.slot_tags, repair_stray_i);
    std::vector<Chunk> gc = bio_chunks(g.slots, repair_stray_i);
    std::sort(pc.begin(), pc.end());
    std::sort(gc.begin(), gc.end());
    std::vector<Chunk> both;
    std::set_intersection(pc.begin(), pc.end(), gc.begin(), gc.end(),
                          std::back_inserter(both));
    b.slots.tp += static_cast<Index>(both.size());
    b.slots.fp += static_cast<Index>(pc.size() - both.size());
    b.slots.fn += static_cast<Index>(gc.size() - both.size());
  }
  const double n = static_cast<double>(b.utterances);
  if (b.utterances > 0) {
    b.domain_accuracy = domain_ok / n;
    b.intent_accuracy = intent_ok / n;
    b.frame_accuracy = frame_ok / n;
  }
  SlotPrf& s = b.slots;
  s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / (s.tp + s.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return b;
}

std::vector<Index> all_ids(std::size_t n) {
  std::vector<Index> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<Index>(i);
  return ids;
}

}  // namespace

double label_accuracy(const std::vector<UtterancePrediction>& predictions,
                      const Corpus& gold, LabelField field) {
  check_aligned(predictions.size(), gold.size());
  if (gold.empty()) return 0.0;
  Index ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& p = predictions[i];
    const auto& g = gold[i];
    ok += field == LabelField::Domain ? p.domain == g.domain
                                      : p.intent == g.intent;
  }
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

SlotPrf slot_f1_micro(const std::vector<UtterancePrediction>& predictions,
                      const Corpus& gold, bool repair_stray_i) {
  check_aligned(predictions.size(), gold.size());
  return block_over(predictions, gold, all_ids(gold.size()), repair_stray_i)
      .slots;
}

double frame_accuracy(const std::vector<UtterancePrediction>& predictions,
                      const Corpus& gold) {
  check_aligned(predictions.size(), gold.size());
  if (gold.empty()) return 0.0;
  Index ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& p = predictions[i];
    const auto& g = gold[i];
    ok += p.domain == g.domain && p.intent == g.intent &&
          p.slot_tags == g.slots;
  }
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

EvalReport evaluate(const std::vector<UtterancePrediction>& predictions,
                    const Corpus& gold, const std::string& model_id,
                    double runtime_seconds) {
  check_aligned(predictions.size(), gold.size());
  EvalReport r;
  r.model_id = model_id;
  r.test_digest = corpus_digest(gold);
  r.runtime_seconds = runtime_seconds;
  r.overall = block_over(predictions, gold, all_ids(gold.size()), true);
  std::map<std::string, std::vector<Index>> by_language;
  for (std::size_t i = 0; i < gold.size(); ++i)
    by_language[gold[i].language].push_back(static_cast<Index>(i));
  for (const auto& [lang, ids] : by_language)
    r.per_language[lang] = block_over(predictions, gold, ids, true);
  return r;
}

std::string corpus_digest(const Corpus& corpus) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](std::string_view s) {
    h = fnv1a64(s.data(), s.size(), h);
    const char sep = '\x1f';
    h = fnv1a64(&sep, 1, h);
  };
  for (const auto& u : corpus) {
    feed(u.language);
    for (const auto& t : u.tokens) feed(t);
    feed(u.domain);
    feed(u.intent);
    for (const auto& s : u.slots) feed(s);
    const char rec = '\x1e';
    h = fnv1a64(&rec, 1, h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- json ----------------------------------------------------------------

namespace {

json block_to_json(const MetricsBlock& b) {
  return json{{"utterances", b.utterances},
              {"domain_accuracy", b.domain_accuracy},
              {"intent_accuracy", b.intent_accuracy},
              {"slot_precision", b.slots.precision},
              {"slot_recall", b.slots.recall},
              {"slot_f1", b.slots.f1},
              {"slot_tp", b.slots.tp},
              {"slot_fp", b.slots.fp},
              {"slot_fn", b.slots.fn},
              {"frame_accuracy", b.frame_accuracy}};
}

MetricsBlock block_from_json(const json& j) {
  MetricsBlock b;
  b.utterances = j.at("utterances").get<Index>();
  b.domain_accuracy = j.at("domain_accuracy").get<double>();
  b.intent_accuracy = j.at("intent_accuracy").get<double>();
  b.slots.precision = j.at("slot_precision").get<double>();
  b.slots.recall = j.at("slot_recall").get<double>();
  b.slots.f1 = j.at("slot_f1").get<double>();
  b.slots.tp = j.at("slot_tp").get<Index>();
  b.slots.fp = j.at("slot_fp").get<Index>();
  b.slots.fn = j.at("slot_fn").get<Index>();
  b.frame_accuracy = j.at("frame_accuracy").get<double>();
  return b;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j{{"model_id", report.model_id},
         {"test_digest", report.test_digest},
         {"runtime_seconds", report.runtime_seconds},
         {"overall", block_to_json(report.overall)}};
  json langs = json::object();
  for (const auto& [lang, b] : report.per_language)
    langs[lang] = block_to_json(b);
  j["per_language"] = langs;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("evaluation report: ") + e.what());
  }
  try {
    EvalReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.test_digest = j.at("test_digest").get<std::string>();
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
    r.overall = block_from_json(j.at("overall"));
    for (const auto& [lang, b] : j.at("per_language").items())
      r.per_language[lang] = block_from_json(b);
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("evaluation report: ") + e.what());
  }
}

// ---- comparison -----------------------------------------------------------

namespace {

MetricChange change_between(double baseline, double candidate) {
  MetricChange c;
  c.baseline = baseline;
  c.candidate = candidate;
  if (baseline == 0.0) {
    c.defined = false;
  } else {
    c.change_pct = (candidate - baseline) / baseline * 100.0;
    c.ratio = candidate / baseline;
  }
  return c;
}

std::map<std::string, double> headline(const EvalReport& r) {
  return {{"domain_accuracy", r.overall.domain_accuracy},
          {"intent_accuracy", r.overall.intent_accuracy},
          {"slot_f1", r.overall.slots.f1},
          {"frame_accuracy", r.overall.frame_accuracy}};
}

}  // namespace

ComparisonReport compare_mean(const std::vector<EvalReport>& baselines,
                              const std::vector<EvalReport>& candidates) {
  if (baselines.empty() || candidates.empty())
    throw ConfigError("compare: need at least one report on each side");
  const std::string digest = baselines.front().test_digest;
  for (const auto* side : {&baselines, &candidates})
    for (const auto& r : *side)
      if (r.test_digest != digest)
        throw ValidationError("compare: test-set digests differ (" + digest +
                              " vs " + r.test_digest +
                              "); reports describe different test sets");

  auto mean_metrics = [](const std::vector<EvalReport>& rs) {
    std::map<std::string, double> m;
    for (const auto& r : rs)
      for (const auto& [k, v] : headline(r)) m[k] += v;
    for (auto& [k, v] : m) v /= static_cast<double>(rs.size());
    return m;
  };
  const auto mb = mean_metrics(baselines);
  const auto mc = mean_metrics(candidates);

  ComparisonReport c;
  c.baseline_id = baselines.front().model_id;
  c.candidate_id = candidates.front().model_id;
  if (baselines.size() > 1)
    c.baseline_id += " (mean of " + std::to_string(baselines.size()) + ")";
  if (candidates.size() > 1)
    c.candidate_id += " (mean of " + std::to_string(candidates.size()) + ")";
  c.test_digest = digest;
  c.runs = static_cast<Index>(std::max(baselines.size(), candidates.size()));
  for (const auto& [k, v] : mb) c.metrics[k] = change_between(v, mc.at(k));
  return c;
}

ComparisonReport compare(const EvalReport& baseline,
                         const EvalReport& candidate) {
  return compare_mean({baseline}, {candidate});
}

std::string comparison_to_json(const ComparisonReport& c) {
  json metrics = json::object();
  for (const auto& [k, m] : c.metrics) {
    json entry{{"baseline", m.baseline},
               {"candidate", m.candidate},
               {"defined", m.defined}};
    if (m.defined) {
      entry["change_pct"] = m.change_pct;
      entry["ratio"] = m.ratio;
    }
    metrics[k] = entry;
  }
  json j{{"baseline_id", c.baseline_id},
         {"candidate_id", c.candidate_id},
         {"test_digest", c.test_digest},
         {"runs", c.runs},
         {"metrics", metrics}};
  return j.dump(2) + "\n";
}

std::string comparison_table(const ComparisonReport& c) {
  std::ostringstream os;
  os << "baseline:  " << c.baseline_id << "\n"
     << "candidate: " << c.candidate_id << "\n"
     << "test set:  " << c.test_digest << "\n";
  os << std::left << std::setw(18) << "metric" << std::right << std::setw(10)
     << "baseline" << std::setw(11) << "candidate" << std::setw(10)
     << "change%" << std::setw(8) << "ratio" << "\n";
  os << std::string(57, '-') << "\n";
  os << std::fixed;
  for (const auto& [k, m] : c.metrics) {
    os << std::left << std::setw(18) << k << std::right << std::setprecision(4)
       << std::setw(10) << m.baseline << std::setw(11) << m.candidate;
    if (m.defined) {
      os << std::setprecision(2) << std::showpos << std::setw(10)
         << m.change_pct << std::noshowpos << std::setprecision(3)
         << std::setw(8) << m.ratio;
    } else {
      os << std::setw(10) << "n/a" << std::setw(8) << "n/a";
    }
    os << "\n";
  }
  return os.str();
}

// ---- benchmarking ----------------------------------------------------------

BenchEntry bench_runtime(const std::string& model_id,
                         const std::function<void()>& fn, Index runs) {
  if (runs < 1) throw ConfigError("bench: runs must be >= 1");
  BenchEntry e;
  e.model_id = model_id;
  double total = 0.0;
  for (Index r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(t1 - t0).count();
    e.run_seconds.push_back(s);
    total += s;
  }
  e.mean_seconds = total / static_cast<double>(runs);
  return e;
}

BenchReport make_bench_report(const std::string& reference_id,
                              std::vector<BenchEntry> entries) {
  const auto ref = std::find_if(
      entries.begin(), entries.end(),
      [&](const BenchEntry& e) { return e.model_id == reference_id; });
  if (ref == entries.end())
    throw ConfigError("bench: reference model '" + reference_id +
                      "' is not among the benchmarked models");
  const double ref_mean = ref->mean_seconds;
  for (BenchEntry& e : entries)
    e.relative = ref_mean > 0.0
                     ? e.mean_seconds / ref_mean
                     : (e.mean_seconds == ref_mean ? 1.0 : 0.0);
  return BenchReport{reference_id, std::move(entries)};
}

std::string bench_to_json(const BenchReport& b) {
  json entries = json::array();
  for (const auto& e : b.entries)
    entries.push_back(json{{"model_id", e.model_id},
                           {"run_seconds", e.run_seconds},
                           {"mean_seconds", e.mean_seconds},
                           {"runtime_rel", e.relative}});
  json j{{"reference_id", b.reference_id}, {"entries", entries}};
  return j.dump(2) + "\n";
}

std::string bench_table(const BenchReport& b) {
  std::size_t width = 5;
  for (const auto& e : b.entries) width = std::max(width, e.model_id.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width) + 2) << "model"
     << std::right << std::setw(12) << "mean (s)" << std::setw(14)
     << "runtime (rel)" << "\n";
  os << std::string(width + 2 + 26, '-') << "\n";
  os << std::fixed;
  for (const auto& e : b.entries) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << e.model_id
       << std::right << std::setprecision(4) << std::setw(12) << e.mean_seconds
       << std::setprecision(2) << std::setw(14) << e.relative << "\n";
  }
  return os.str();
}

}  // namespace mlnlu
