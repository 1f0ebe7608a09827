#pragma once

#include <map>
#include <string>
#include <vector>

#include "mlnlu/metrics.hpp"
#include "mlnlu/training.hpp"

namespace mlnlu {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Options structs mirror the command-line surface; the binary fills them and
// each run_* function does the work, writes its artifacts into out_dir, and
// returns the run manifest it also wrote to out_dir/run_manifest.json.
// The manifest's run_digest covers everything reproducible (command, resolved
// config, seeds, input digests, output names, toolkit version) and excludes
// the timestamp, so artifacts that embed it stay byte-identical across reruns.

struct GenSynthOptions {
  std::vector<std::string> languages;
  Index count = 500;
  std::uint64_t seed = 0;
  Index dim = 64;  // width of the written aligned vectors
  std::map<std::string, double> low_resource;
  std::string out_dir;
};

struct TrainOptions {
  std::string model = "dnn";  // "dnn" | "maxent-baseline"
  std::vector<std::string> train_files;
  std::vector<std::string> languages;  // keep only these (empty: all)
  std::string vectors;
  std::string out_dir;
  DnnConfig dnn;
  TrainingConfig training;
  MaxEntSystemConfig maxent;
};

struct TransferOptions {
  std::string source;          // source checkpoint path
  std::string mode = "encdec"; // "encdec" | "enc" | "enc-vlr"
  std::vector<std::string> train_files;
  std::vector<std::string> languages;
  std::string vectors;
  std::string out_dir;
  TrainingConfig training;
};

struct EvalOptions {
  std::string model_path;
  std::vector<std::string> test_files;
  std::vector<std::string> languages;
  std::string model_id;  // default: checkpoint filename stem
  bool per_language = false;
  std::string out_dir;
};

struct CompareOptions {
  std::vector<std::string> baseline_reports;
  std::vector<std::string> candidate_reports;
  std::string out_dir;
};

struct BenchOptions {
  std::vector<std::string> model_paths;
  std::vector<std::string> test_files;
  std::vector<std::string> languages;
  Index runs = 3;
  std::string reference;  // model id; default: the first model
  std::string out_dir;
};

nlohmann::json run_gen_synth(const GenSynthOptions& opt);
nlohmann::json run_train(const TrainOptions& opt);
nlohmann::json run_transfer(const TransferOptions& opt);
nlohmann::json run_eval(const EvalOptions& opt);
nlohmann::json run_compare(const CompareOptions& opt);
nlohmann::json run_bench(const BenchOptions& opt);

// ---- shared helpers ---------------------------------------------------------

/// Loads and concatenates corpus files, then applies the language filter.
/// An empty result after filtering raises ValidationError.
Corpus load_corpora(const std::vector<std::string>& files,
                    const std::vector<std::string>& languages);

/// fnv1a64 over the file's raw bytes, 16 hex chars. Unreadable -> ParseError.
std::string file_digest_hex(const std::string& path);

/// Human-readable metrics table; per_language adds one column per language.
std::string eval_table(const EvalReport& report, bool per_language);

TransferMode transfer_mode_from_name(const std::string& name);

}  // namespace mlnlu
