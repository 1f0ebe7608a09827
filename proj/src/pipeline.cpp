#include "mlnlu/pipeline.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace mlnlu {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex16(std::uint64_t v) {
  char b[17];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
  return b;
}

std::string now_utc_iso() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << content;
  if (!out) throw ParseError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("an output directory is required");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ParseError("cannot create output directory " + out_dir + ": " +
                           ec.message());
  return out_dir;
}

/// Manifest whose run_digest covers the reproducible core: command, resolved
/// config (minus the output location, which does not affect the computation),
/// seeds, input digests, output names, toolkit version. The timestamp is
/// added after digesting, so a rerun reproduces the digest and every artifact
/// that embeds it byte for byte.
json make_manifest(const std::string& command, json resolved_config,
                   json seeds, json input_digests,
                   const std::vector<std::string>& outputs) {
  json core{{"command", command},
            {"resolved_config", resolved_config},
            {"seeds", std::move(seeds)},
            {"input_digests", std::move(input_digests)},
            {"outputs", outputs},
            {"toolkit_version", kToolkitVersion}};
  core["resolved_config"].erase("out");
  json manifest = core;
  manifest["resolved_config"] = std::move(resolved_config);
  manifest["run_digest"] = hex16(fnv1a64(core.dump()));
  manifest["timestamp_utc"] = now_utc_iso();
  return manifest;
}

/// Stamps the manifest's run digest into a JSON artifact, so provenance
/// survives the file being copied away from its manifest.
std::string with_run_digest(const std::string& json_text,
                            const json& manifest) {
  json j = json::parse(json_text);
  j["run_digest"] = manifest.at("run_digest");
  return j.dump(2) + "\n";
}

void write_manifest(const std::string& out_dir, const json& manifest) {
  write_text(out_dir + "/run_manifest.json", manifest.dump(2) + "\n");
}

json dnn_config_json(const DnnConfig& c) {
  return json{{"d_word", c.emb.d_word},   {"d_char", c.emb.d_char},
              {"n_f", c.emb.n_f},         {"widths", c.emb.widths},
              {"hidden", c.hidden},       {"ic_hidden", c.ic_hidden},
              {"dropout", c.dropout},     {"mean_pool", c.mean_pool}};
}

json training_config_json(const TrainingConfig& c) {
  return json{{"alpha", c.alpha},
              {"beta", c.beta},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"unfreeze_steps", c.unfreeze_steps},
              {"expand_vocab", c.expand_vocab},
              {"vlr_embeddings_only", c.vlr_embeddings_only},
              {"valid_ratio", c.valid_ratio},
              {"grad_clip", c.grad_clip}};
}

json maxent_config_json(const MaxEntConfig& c) {
  return json{{"lambda", c.lambda},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"language_feature", c.language_feature}};
}

json sparse_crf_config_json(const SparseCrfConfig& c) {
  return json{{"lambda", c.lambda},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"batch_size", c.batch_size}};
}

std::vector<std::string> corpus_languages(const Corpus& corpus) {
  std::set<std::string> langs;
  for (const AnnotatedUtterance& u : corpus) langs.insert(u.language);
  return {langs.begin(), langs.end()};
}

json input_digests_for(const std::vector<std::string>& files) {
  json d = json::object();
  for (const std::string& f : files) d[f] = file_digest_hex(f);
  return d;
}

std::string path_stem(const std::string& path) {
  return fs::path(path).stem().string();
}

// ---- model-kind dispatch ------------------------------------------------

struct LoadedModel {
  std::optional<DnnModel> dnn;
  std::optional<MaxEntSystem> maxent;
};

LoadedModel load_any_model(const Checkpoint& cp) {
  std::string kind;
  try {
    kind = cp.meta.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint meta: ") + e.what());
  }
  LoadedModel m;
  if (kind == "dnn")
    m.dnn = dnn_from_checkpoint(cp);
  else if (kind == "maxent")
    m.maxent = maxent_system_from_checkpoint(cp);
  else
    throw CorruptionError("unknown checkpoint kind '" + kind + "'");
  return m;
}

std::vector<UtterancePrediction> predict_any(const LoadedModel& m,
                                             const Corpus& corpus) {
  return m.dnn ? predict_corpus(*m.dnn, corpus)
               : predict_maxent_corpus(*m.maxent, corpus);
}

}  // namespace

// ---- shared helpers ------------------------------------------------------

Corpus load_corpora(const std::vector<std::string>& files,
                    const std::vector<std::string>& languages) {
  if (files.empty()) throw ConfigError("no corpus files given");
  Corpus out;
  for (const std::string& f : files) {
    const Corpus part = load_corpus(f);
    out.insert(out.end(), part.begin(), part.end());
  }
  if (!languages.empty()) {
    const std::set<std::string> keep(languages.begin(), languages.end());
    Corpus kept;
    for (AnnotatedUtterance& u : out)
      if (keep.count(u.language)) kept.push_back(std::move(u));
    out = std::move(kept);
  }
  if (out.empty())
    throw ValidationError(languages.empty()
                              ? "the corpus files contain no utterances"
                              : "no utterances left after the language filter");
  return out;
}

std::string file_digest_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return hex16(fnv1a64(bytes));
}

TransferMode transfer_mode_from_name(const std::string& name) {
  if (name == "encdec") return TransferMode::EncDec;
  if (name == "enc") return TransferMode::Enc;
  if (name == "enc-vlr") return TransferMode::EncVlr;
  throw ConfigError("unknown transfer mode '" + name +
                    "' (expected encdec, enc, or enc-vlr)");
}

std::string eval_table(const EvalReport& report, bool per_language) {
  std::ostringstream out;
  out << "model " << report.model_id << "  (" << report.overall.utterances
      << " utterances, test digest " << report.test_digest << ")\n";
  std::vector<std::string> langs;
  if (per_language)
    for (const auto& [lang, block] : report.per_language) langs.push_back(lang);

  char line[256];
  std::snprintf(line, sizeof line, "%-18s %10s", "metric", "overall");
  out << line;
  for (const std::string& l : langs) {
    std::snprintf(line, sizeof line, " %10s", l.c_str());
    out << line;
  }
  out << "\n";

  const auto row = [&](const char* name, auto pick) {
    std::snprintf(line, sizeof line, "%-18s %10.4f", name,
                  pick(report.overall));
    out << line;
    for (const std::string& l : langs) {
      std::snprintf(line, sizeof line, " %10.4f",
                    pick(report.per_language.at(l)));
      out << line;
    }
    out << "\n";
  };
  row("domain accuracy", [](const MetricsBlock& b) { return b.domain_accuracy; });
  row("intent accuracy", [](const MetricsBlock& b) { return b.intent_accuracy; });
  row("slot F1", [](const MetricsBlock& b) { return b.slots.f1; });
  row("frame accuracy", [](const MetricsBlock& b) { return b.frame_accuracy; });
  return out.str();
}

// ---- gen-synth -----------------------------------------------------------

json run_gen_synth(const GenSynthOptions& opt) {
  if (opt.languages.empty()) throw ConfigError("at least one language is required");
  {
    const std::set<std::string> uniq(opt.languages.begin(),
                                     opt.languages.end());
    if (uniq.size() != opt.languages.size())
      throw ConfigError("duplicate language names");
  }
  if (opt.count < 1) throw ConfigError("count must be >= 1");
  if (opt.dim < 1) throw ConfigError("vector dimension must be >= 1");
  for (const auto& [lang, ratio] : opt.low_resource) {
    if (std::find(opt.languages.begin(), opt.languages.end(), lang) ==
        opt.languages.end())
      throw ConfigError("low-resource language '" + lang +
                        "' is not in --languages");
    if (ratio <= 0.0 || ratio > 1.0)
      throw ConfigError("low-resource ratio must be in (0, 1]");
  }
  const std::string dir = ensure_out_dir(opt.out_dir);

  const SynthResult res =
      gen_synthetic(opt.languages, opt.count, opt.seed, opt.low_resource);

  std::vector<std::string> outputs;
  for (const std::string& lang : opt.languages) {
    const std::string train_name = lang + "_train.jsonl";
    const std::string test_name = lang + "_test.jsonl";
    write_corpus(dir + "/" + train_name, res.train.at(lang));
    write_corpus(dir + "/" + test_name, res.test.at(lang));
    outputs.push_back(train_name);
    outputs.push_back(test_name);
  }
  write_synthetic_vec(dir + "/vectors.vec", res.lexemes, opt.dim, opt.seed);
  outputs.push_back("vectors.vec");
  outputs.push_back("stats.json");

  const json manifest = make_manifest(
      "gen-synth",
      json{{"languages", opt.languages},
           {"count", opt.count},
           {"seed", opt.seed},
           {"dim", opt.dim},
           {"low_resource", opt.low_resource},
           {"out", opt.out_dir}},
      json{{"seed", opt.seed}}, json::object(), outputs);
  write_text(dir + "/stats.json",
             with_run_digest(stats_to_json(res.stats), manifest));
  write_manifest(dir, manifest);

  std::cout << "wrote " << outputs.size() << " files to " << dir << " ("
            << opt.languages.size() << " languages, " << opt.count
            << " train utterances each before low-resource scaling)\n";
  return manifest;
}

// ---- train -----------------------------------------------------------------

json run_train(const TrainOptions& opt) {
  const std::string dir = ensure_out_dir(opt.out_dir);
  const Corpus corpus = load_corpora(opt.train_files, opt.languages);

  json inputs = input_digests_for(opt.train_files);
  if (!opt.vectors.empty()) inputs[opt.vectors] = file_digest_hex(opt.vectors);

  json resolved{{"model", opt.model},
                {"train", opt.train_files},
                {"languages", opt.languages},
                {"vectors", opt.vectors},
                {"out", opt.out_dir},
                {"training", training_config_json(opt.training)}};
  const std::vector<std::string> outputs{"model.ckpt", "history.json"};

  if (opt.model == "dnn") {
    resolved["dnn"] = dnn_config_json(opt.dnn);
    const json manifest = make_manifest("train", resolved,
                                        json{{"seed", opt.training.seed}},
                                        inputs, outputs);
    const TrainResult r = train_dnn(corpus, opt.dnn, opt.training, opt.vectors);
    const json provenance{{"command", "train"},
                          {"model", "dnn"},
                          {"mode", "scratch"},
                          {"languages", corpus_languages(corpus)},
                          {"seed", opt.training.seed},
                          {"run_digest", manifest.at("run_digest")}};
    save_checkpoint(dnn_to_checkpoint(r.model, provenance),
                    dir + "/model.ckpt");
    json history = history_to_json(r.history);
    history["run_digest"] = manifest.at("run_digest");
    write_text(dir + "/history.json", history.dump(2) + "\n");
    write_manifest(dir, manifest);
    std::cout << "trained dnn on " << corpus.size() << " utterances; best "
              << "monitored loss " << r.history.best_monitored << " at epoch "
              << r.history.best_epoch << "; wrote " << dir << "/model.ckpt\n";
    return manifest;
  }
  if (opt.model == "maxent-baseline") {
    MaxEntSystemConfig mcfg = opt.maxent;
    mcfg.seed = opt.training.seed;
    resolved["maxent"] = json{{"dc", maxent_config_json(mcfg.dc)},
                              {"ic", maxent_config_json(mcfg.ic)},
                              {"ner", sparse_crf_config_json(mcfg.ner)}};
    const json manifest = make_manifest("train", resolved,
                                        json{{"seed", opt.training.seed}},
                                        inputs, outputs);
    const MaxEntSystem sys = train_maxent_system(corpus, mcfg);
    const json provenance{{"command", "train"},
                          {"model", "maxent-baseline"},
                          {"mode", "scratch"},
                          {"languages", corpus_languages(corpus)},
                          {"seed", opt.training.seed},
                          {"run_digest", manifest.at("run_digest")}};
    save_checkpoint(maxent_system_to_checkpoint(sys, provenance),
                    dir + "/model.ckpt");
    const json history{
        {"final_losses",
         json{{"dc", maxent_loss(sys.dc, corpus)},
              {"ic", maxent_loss(sys.ic, corpus)},
              {"ner", sparse_crf_loss(sys.ner, corpus)}}},
        {"run_digest", manifest.at("run_digest")}};
    write_text(dir + "/history.json", history.dump(2) + "\n");
    write_manifest(dir, manifest);
    std::cout << "trained maxent-baseline on " << corpus.size()
              << " utterances; wrote " << dir << "/model.ckpt\n";
    return manifest;
  }
  throw ConfigError("unknown model family '" + opt.model +
                    "' (expected dnn or maxent-baseline)");
}

// ---- transfer ----------------------------------------------------------------

json run_transfer(const TransferOptions& opt) {
  const std::string dir = ensure_out_dir(opt.out_dir);
  const TransferMode mode = transfer_mode_from_name(opt.mode);
  const Checkpoint source = load_checkpoint(opt.source);
  const Corpus corpus = load_corpora(opt.train_files, opt.languages);

  json inputs = input_digests_for(opt.train_files);
  inputs[opt.source] = file_digest_hex(opt.source);
  if (!opt.vectors.empty()) inputs[opt.vectors] = file_digest_hex(opt.vectors);

  TransferResult tr =
      mode == TransferMode::EncDec
          ? transfer_encdec(source, corpus, opt.training.expand_vocab,
                            opt.vectors, opt.training.seed)
          : mode == TransferMode::Enc
                ? transfer_enc(source, corpus, opt.vectors, opt.training.seed)
                : transfer_enc_vlr(source, corpus, opt.vectors,
                                   opt.training.seed);

  if (mode == TransferMode::EncDec && !opt.training.expand_vocab &&
      (!tr.novel_intents.empty() || !tr.novel_slot_labels.empty())) {
    std::cout << "warning: the source decoders cannot predict these target "
                 "labels:";
    for (const std::string& s : tr.novel_intents) std::cout << " intent=" << s;
    for (const std::string& s : tr.novel_slot_labels)
      std::cout << " slot=" << s;
    std::cout << " (use --expand-vocab to grow the decoder heads)\n";
  }

  json frozen = json::array();
  if (mode == TransferMode::Enc) frozen = {"embeddings", "encoder"};
  if (mode == TransferMode::EncVlr && opt.training.vlr_embeddings_only)
    frozen = {"encoder"};

  json resolved{{"source", opt.source},
                {"mode", opt.mode},
                {"train", opt.train_files},
                {"languages", opt.languages},
                {"vectors", opt.vectors},
                {"out", opt.out_dir},
                {"training", training_config_json(opt.training)},
                {"frozen", frozen},
                {"novel_intents", tr.novel_intents},
                {"novel_slot_labels", tr.novel_slot_labels}};
  const std::vector<std::string> outputs{"model.ckpt", "history.json"};
  const json manifest = make_manifest("transfer", resolved,
                                      json{{"seed", opt.training.seed}},
                                      inputs, outputs);

  const json provenance{{"command", "transfer"},
                        {"mode", opt.mode},
                        {"source_digest", inputs.at(opt.source)},
                        {"expand_vocab", opt.training.expand_vocab},
                        {"unfreeze_steps", opt.training.unfreeze_steps},
                        {"vlr_embeddings_only", opt.training.vlr_embeddings_only},
                        {"frozen", frozen},
                        {"novel_intents", tr.novel_intents},
                        {"novel_slot_labels", tr.novel_slot_labels},
                        {"languages", corpus_languages(corpus)},
                        {"seed", opt.training.seed},
                        {"run_digest", manifest.at("run_digest")}};

  const TrainResult r =
      fine_tune_dnn(std::move(tr.model), corpus, opt.training, mode);
  save_checkpoint(dnn_to_checkpoint(r.model, provenance), dir + "/model.ckpt");
  json history = history_to_json(r.history);
  history["run_digest"] = manifest.at("run_digest");
  write_text(dir + "/history.json", history.dump(2) + "\n");
  write_manifest(dir, manifest);
  std::cout << "transferred (" << opt.mode << ") and fine-tuned on "
            << corpus.size() << " utterances; wrote " << dir
            << "/model.ckpt\n";
  return manifest;
}

// ---- eval ---------------------------------------------------------------------

json run_eval(const EvalOptions& opt) {
  const std::string dir = ensure_out_dir(opt.out_dir);
  const Checkpoint cp = load_checkpoint(opt.model_path);
  const Corpus gold = load_corpora(opt.test_files, opt.languages);
  const std::string id =
      opt.model_id.empty() ? path_stem(opt.model_path) : opt.model_id;

  const LoadedModel model = load_any_model(cp);
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<UtterancePrediction> preds = predict_any(model, gold);
  const double runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const EvalReport report = evaluate(preds, gold, id, runtime);

  json inputs = input_digests_for(opt.test_files);
  inputs[opt.model_path] = file_digest_hex(opt.model_path);
  const json manifest = make_manifest(
      "eval",
      json{{"model", opt.model_path},
           {"test", opt.test_files},
           {"languages", opt.languages},
           {"model_id", id},
           {"per_language", opt.per_language},
           {"out", opt.out_dir}},
      json::object(), inputs, {"report.json"});
  write_text(dir + "/report.json",
             with_run_digest(report_to_json(report), manifest));
  write_manifest(dir, manifest);

  std::cout << eval_table(report, opt.per_language);
  return manifest;
}

// ---- compare --------------------------------------------------------------------

json run_compare(const CompareOptions& opt) {
  const std::string dir = ensure_out_dir(opt.out_dir);
  std::vector<EvalReport> baselines, candidates;
  for (const std::string& f : opt.baseline_reports)
    baselines.push_back(report_from_json(read_text(f)));
  for (const std::string& f : opt.candidate_reports)
    candidates.push_back(report_from_json(read_text(f)));

  const ComparisonReport c = compare_mean(baselines, candidates);

  json inputs = input_digests_for(opt.baseline_reports);
  const json candidate_inputs = input_digests_for(opt.candidate_reports);
  for (const auto& [k, v] : candidate_inputs.items()) inputs[k] = v;
  const json manifest = make_manifest(
      "compare",
      json{{"baseline", opt.baseline_reports},
           {"candidate", opt.candidate_reports},
           {"out", opt.out_dir}},
      json::object(), inputs, {"comparison.json"});
  write_text(dir + "/comparison.json",
             with_run_digest(comparison_to_json(c), manifest));
  write_manifest(dir, manifest);

  std::cout << comparison_table(c);
  return manifest;
}

// ---- bench ---------------------------------------------------------------------

json run_bench(const BenchOptions& opt) {
  const std::string dir = ensure_out_dir(opt.out_dir);
  if (opt.model_paths.empty()) throw ConfigError("no models given");
  const Corpus test = load_corpora(opt.test_files, opt.languages);

  std::vector<BenchEntry> entries;
  for (const std::string& path : opt.model_paths) {
    const LoadedModel model = load_any_model(load_checkpoint(path));
    entries.push_back(bench_runtime(
        path_stem(path), [&] { predict_any(model, test); }, opt.runs));
  }
  const std::string reference =
      opt.reference.empty() ? entries.front().model_id : opt.reference;
  const BenchReport report = make_bench_report(reference, std::move(entries));

  json inputs = input_digests_for(opt.model_paths);
  const json test_inputs = input_digests_for(opt.test_files);
  for (const auto& [k, v] : test_inputs.items()) inputs[k] = v;
  const json manifest = make_manifest(
      "bench",
      json{{"models", opt.model_paths},
           {"test", opt.test_files},
           {"languages", opt.languages},
           {"runs", opt.runs},
           {"reference", reference},
           {"out", opt.out_dir}},
      json::object(), inputs, {"bench.json"});
  write_text(dir + "/bench.json",
             with_run_digest(bench_to_json(report), manifest));
  write_manifest(dir, manifest);

  std::cout << bench_table(report);
  return manifest;
}

}  // namespace mlnlu
