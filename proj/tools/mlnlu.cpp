// mlnlu: multilingual NLU toolkit command-line front end.
//
// Subcommands: gen-synth, train, transfer, eval, compare, bench. Each parses
// its flags, optionally overlays a JSON --config file (command-line flags
// win, then config file, then built-in defaults), and hands a filled options
// struct to the corresponding pipeline entry point.
//
// Exit codes: 0 success, 2 usage/config error, 3 data or validation error,
// 4 checkpoint/transfer compatibility error, 1 anything else.

#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlnlu/pipeline.hpp"

namespace {

using nlohmann::json;

/// Config-file keys a subcommand accepts, each bound to a target variable.
/// Keys are spelled like the flag without the leading dashes.
struct ConfigBinding {
  std::map<std::string, std::function<void(const json&)>> setters;

  template <class T>
  void bind(const std::string& key, T& target) {
    setters[key] = [&target](const json& v) { target = v.get<T>(); };
  }
};

/// Overlays a JSON config file onto already-parsed options. A key is skipped
/// when its flag appeared on the command line, so flags take precedence.
void apply_config_file(const CLI::App* sub, const std::string& path,
                       const ConfigBinding& binding) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw mlnlu::ConfigError("cannot open config file: " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw mlnlu::ConfigError(std::string("config file is not valid JSON: ") +
                             e.what());
  }
  if (!cfg.is_object())
    throw mlnlu::ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    const auto it = binding.setters.find(key);
    if (it == binding.setters.end())
      throw mlnlu::ConfigError("unknown config key '" + key + "'");
    if (sub->count("--" + key) > 0) continue;  // the flag wins
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw mlnlu::ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

std::map<std::string, double> parse_low_resource(
    const std::vector<std::string>& pairs) {
  std::map<std::string, double> out;
  for (const std::string& p : pairs) {
    const std::size_t eq = p.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == p.size())
      throw mlnlu::ConfigError("--low-resource expects lang=ratio, got '" + p +
                               "'");
    double ratio = 0.0;
    try {
      std::size_t used = 0;
      ratio = std::stod(p.substr(eq + 1), &used);
      if (used != p.size() - eq - 1) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw mlnlu::ConfigError("--low-resource ratio is not a number in '" +
                               p + "'");
    }
    out[p.substr(0, eq)] = ratio;
  }
  return out;
}

/// Flags shared by the two loops that fit a model (train and transfer).
void add_training_flags(CLI::App* sub, mlnlu::TrainingConfig& t,
                        ConfigBinding& binding) {
  sub->add_option("--epochs", t.max_epochs, "Maximum training epochs");
  sub->add_option("--patience", t.patience,
                  "Epochs without improvement before stopping");
  sub->add_option("--lr", t.lr, "Adam learning rate");
  sub->add_option("--batch-size", t.batch_size, "Mini-batch size");
  sub->add_option("--alpha", t.alpha, "Weight of the intent loss");
  sub->add_option("--beta", t.beta, "Weight of the slot loss");
  sub->add_option("--valid-ratio", t.valid_ratio,
                  "Fraction of training data held out for early stopping");
  sub->add_option("--grad-clip", t.grad_clip,
                  "Global gradient-norm clip (<= 0 disables)");
  sub->add_option("--seed", t.seed, "Master random seed");
  binding.bind("epochs", t.max_epochs);
  binding.bind("patience", t.patience);
  binding.bind("lr", t.lr);
  binding.bind("batch-size", t.batch_size);
  binding.bind("alpha", t.alpha);
  binding.bind("beta", t.beta);
  binding.bind("valid-ratio", t.valid_ratio);
  binding.bind("grad-clip", t.grad_clip);
  binding.bind("seed", t.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mlnlu: multilingual natural-language-understanding toolkit"};
  app.require_subcommand(1);

  // ---- gen-synth ----
  mlnlu::GenSynthOptions gen;
  std::vector<std::string> gen_low_resource;
  std::string gen_config;
  ConfigBinding gen_binding;
  CLI::App* gen_sub =
      app.add_subcommand("gen-synth", "Generate a synthetic corpus");
  gen_sub->add_option("--languages", gen.languages, "Languages to generate")
      ->delimiter(',')
      ->required();
  gen_sub->add_option("--count", gen.count, "Train utterances per language");
  gen_sub->add_option("--seed", gen.seed, "Master random seed");
  gen_sub->add_option("--dim", gen.dim, "Dimension of the written vectors");
  gen_sub->add_option("--low-resource", gen_low_resource,
                      "lang=ratio: scale that language's train split");
  gen_sub->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_sub->add_option("--config", gen_config, "JSON config file");
  gen_binding.bind("count", gen.count);
  gen_binding.bind("seed", gen.seed);
  gen_binding.bind("dim", gen.dim);
  gen_binding.setters["low-resource"] = [&gen](const json& v) {
    gen.low_resource = v.get<std::map<std::string, double>>();
  };
  gen_sub->callback([&] {
    apply_config_file(gen_sub, gen_config, gen_binding);
    if (!gen_low_resource.empty())
      gen.low_resource = parse_low_resource(gen_low_resource);
    mlnlu::run_gen_synth(gen);
  });

  // ---- train ----
  mlnlu::TrainOptions train;
  std::string train_config;
  ConfigBinding train_binding;
  CLI::App* train_sub = app.add_subcommand("train", "Train a model");
  train_sub->add_option("--model", train.model,
                        "Model family: dnn or maxent-baseline");
  train_sub->add_option("--train", train.train_files, "Training corpus files")
      ->required();
  train_sub->add_option("--languages", train.languages,
                        "Keep only these languages")
      ->delimiter(',');
  train_sub->add_option("--vectors", train.vectors,
                        "Aligned word-vector file (.vec)");
  train_sub->add_option("--out", train.out_dir, "Output directory")
      ->required();
  train_sub->add_option("--config", train_config, "JSON config file");
  add_training_flags(train_sub, train.training, train_binding);
  train_sub->add_option("--dropout", train.dnn.dropout,
                        "Dropout rate on encoder inputs/outputs");
  train_sub->add_option("--hidden", train.dnn.hidden,
                        "Encoder units per direction");
  train_sub->add_option("--ic-hidden", train.dnn.ic_hidden,
                        "Intent MLP hidden width");
  train_sub->add_option("--d-word", train.dnn.emb.d_word,
                        "Word embedding dimension");
  train_sub->add_flag("--mean-pool", train.dnn.mean_pool,
                      "Pool intent features by token mean");
  train_binding.bind("model", train.model);
  train_binding.bind("languages", train.languages);
  train_binding.bind("vectors", train.vectors);
  train_binding.bind("dropout", train.dnn.dropout);
  train_binding.bind("hidden", train.dnn.hidden);
  train_binding.bind("ic-hidden", train.dnn.ic_hidden);
  train_binding.bind("d-word", train.dnn.emb.d_word);
  train_binding.bind("d-char", train.dnn.emb.d_char);
  train_binding.bind("n-f", train.dnn.emb.n_f);
  train_binding.bind("widths", train.dnn.emb.widths);
  train_binding.bind("mean-pool", train.dnn.mean_pool);
  train_sub->callback([&] {
    apply_config_file(train_sub, train_config, train_binding);
    mlnlu::run_train(train);
  });

  // ---- transfer ----
  mlnlu::TransferOptions transfer;
  std::string transfer_config;
  ConfigBinding transfer_binding;
  CLI::App* transfer_sub = app.add_subcommand(
      "transfer", "Adapt a trained model to a target corpus");
  transfer_sub->add_option("--source", transfer.source, "Source checkpoint")
      ->required();
  transfer_sub->add_option("--mode", transfer.mode,
                           "Transfer regime: encdec, enc, or enc-vlr");
  transfer_sub
      ->add_option("--train", transfer.train_files, "Target corpus files")
      ->required();
  transfer_sub
      ->add_option("--languages", transfer.languages,
                   "Keep only these languages")
      ->delimiter(',');
  transfer_sub->add_option("--vectors", transfer.vectors,
                           "Aligned word-vector file (.vec)");
  transfer_sub->add_option("--out", transfer.out_dir, "Output directory")
      ->required();
  transfer_sub->add_option("--config", transfer_config, "JSON config file");
  add_training_flags(transfer_sub, transfer.training, transfer_binding);
  transfer_sub->add_flag("--expand-vocab", transfer.training.expand_vocab,
                         "Grow the source decoders to cover novel labels");
  transfer_sub->add_option("--unfreeze-steps", transfer.training.unfreeze_steps,
                           "enc-vlr: steps over which the copied stack ramps "
                           "up to the full learning rate");
  transfer_sub->add_flag("--vlr-embeddings-only",
                         transfer.training.vlr_embeddings_only,
                         "enc-vlr: ramp only the embeddings, keep the encoder "
                         "frozen");
  transfer_binding.bind("mode", transfer.mode);
  transfer_binding.bind("languages", transfer.languages);
  transfer_binding.bind("vectors", transfer.vectors);
  transfer_binding.bind("expand-vocab", transfer.training.expand_vocab);
  transfer_binding.bind("unfreeze-steps", transfer.training.unfreeze_steps);
  transfer_binding.bind("vlr-embeddings-only",
                        transfer.training.vlr_embeddings_only);
  transfer_sub->callback([&] {
    apply_config_file(transfer_sub, transfer_config, transfer_binding);
    mlnlu::run_transfer(transfer);
  });

  // ---- eval ----
  mlnlu::EvalOptions eval;
  std::string eval_config;
  ConfigBinding eval_binding;
  CLI::App* eval_sub =
      app.add_subcommand("eval", "Evaluate a checkpoint on a test corpus");
  eval_sub->add_option("--model", eval.model_path, "Checkpoint to evaluate")
      ->required();
  eval_sub->add_option("--test", eval.test_files, "Test corpus files")
      ->required();
  eval_sub
      ->add_option("--languages", eval.languages, "Keep only these languages")
      ->delimiter(',');
  eval_sub->add_option("--model-id", eval.model_id,
                       "Identifier used in the report (default: file stem)");
  eval_sub->add_flag("--per-language", eval.per_language,
                     "Add one metrics column per language");
  eval_sub->add_option("--out", eval.out_dir, "Output directory")->required();
  eval_sub->add_option("--config", eval_config, "JSON config file");
  eval_binding.bind("languages", eval.languages);
  eval_binding.bind("model-id", eval.model_id);
  eval_binding.bind("per-language", eval.per_language);
  eval_sub->callback([&] {
    apply_config_file(eval_sub, eval_config, eval_binding);
    mlnlu::run_eval(eval);
  });

  // ---- compare ----
  mlnlu::CompareOptions compare;
  std::string compare_config;
  ConfigBinding compare_binding;
  CLI::App* compare_sub = app.add_subcommand(
      "compare", "Compare mean metrics of two report groups");
  compare_sub
      ->add_option("--baseline", compare.baseline_reports, "Baseline reports")
      ->required();
  compare_sub
      ->add_option("--candidate", compare.candidate_reports,
                   "Candidate reports")
      ->required();
  compare_sub->add_option("--out", compare.out_dir, "Output directory")
      ->required();
  compare_sub->add_option("--config", compare_config, "JSON config file");
  compare_sub->callback([&] {
    apply_config_file(compare_sub, compare_config, compare_binding);
    mlnlu::run_compare(compare);
  });

  // ---- bench ----
  mlnlu::BenchOptions bench;
  std::string bench_config;
  ConfigBinding bench_binding;
  CLI::App* bench_sub =
      app.add_subcommand("bench", "Time full-corpus prediction per model");
  bench_sub->add_option("--model", bench.model_paths, "Checkpoints to time")
      ->required();
  bench_sub->add_option("--test", bench.test_files, "Test corpus files")
      ->required();
  bench_sub
      ->add_option("--languages", bench.languages, "Keep only these languages")
      ->delimiter(',');
  bench_sub->add_option("--runs", bench.runs, "Timed runs per model");
  bench_sub->add_option("--reference", bench.reference,
                        "Model id the relative column divides by");
  bench_sub->add_option("--out", bench.out_dir, "Output directory")
      ->required();
  bench_sub->add_option("--config", bench_config, "JSON config file");
  bench_binding.bind("languages", bench.languages);
  bench_binding.bind("runs", bench.runs);
  bench_binding.bind("reference", bench.reference);
  bench_sub->callback([&] {
    apply_config_file(bench_sub, bench_config, bench_binding);
    mlnlu::run_bench(bench);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 2;
  } catch (const mlnlu::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mlnlu::TransferError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const mlnlu::FormatVersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const mlnlu::CorruptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const mlnlu::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mlnlu::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
