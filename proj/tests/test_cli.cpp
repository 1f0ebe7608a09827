// End-to-end tests of the mlnlu command-line binary. The binary's path
// arrives in the MLNLU_BIN environment variable; every case works inside its
// own temporary directory and drives the real executable through std::system.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlnlu/checkpoint.hpp"
#include "mlnlu/data.hpp"
#include "mlnlu/metrics.hpp"
#include "mlnlu/pipeline.hpp"

using namespace mlnlu;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* b = std::getenv("MLNLU_BIN");
  REQUIRE_MESSAGE(b != nullptr, "MLNLU_BIN must point at the mlnlu binary");
  return b;
}

/// Unique scratch directory, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static std::uint64_t counter = 0;
    path = fs::temp_directory_path() /
           ("mlnlu_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& rel) const {
    return (path / rel).string();
  }
};

struct RunResult {
  int rc = -1;
  std::string output;  // stdout and stderr combined
};

RunResult run(const TempDir& dir, const std::string& args) {
  const std::string log = dir / "cmd_output.txt";
  const std::string cmd = bin() + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), ("missing file: " + path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::size_t line_count(const std::string& path) {
  const std::string text = slurp(path);
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

json load_json(const std::string& path) { return json::parse(slurp(path)); }

/// Generates a small two-language corpus with 8-dimensional vectors.
void gen_small(const TempDir& dir, const std::string& out, int count = 20,
               std::uint64_t seed = 7) {
  const RunResult r =
      run(dir, "gen-synth --languages l1,l2 --count " + std::to_string(count) +
                   " --seed " + std::to_string(seed) + " --dim 8 --out " +
                   (dir / out));
  REQUIRE(r.rc == 0);
}

std::string tiny_loop_flags() {
  return " --epochs 2 --valid-ratio 0 --batch-size 8";
}

/// Architecture flags exist on train only; transfer inherits the source's.
std::string tiny_dnn_flags() {
  return tiny_loop_flags() + " --hidden 8 --ic-hidden 8 --d-word 8";
}

}  // namespace

TEST_CASE("gen-synth writes the advertised files and reruns byte-identically") {
  TempDir dir;
  gen_small(dir, "a");
  for (const char* f :
       {"l1_train.jsonl", "l1_test.jsonl", "l2_train.jsonl", "l2_test.jsonl",
        "vectors.vec", "stats.json", "run_manifest.json"})
    CHECK_MESSAGE(fs::exists(dir.path / "a" / f), f);

  const CorpusStats stats = stats_from_json(slurp(dir / "a/stats.json"));
  REQUIRE(stats.languages.size() == 2);
  CHECK(stats.languages[0].language == "l1");
  CHECK(stats.languages[0].utterances_train == 20);
  CHECK(stats.languages[0].utterances_test == 4);  // count / 5
  CHECK(stats.languages[1].utterances_train == 20);

  // The corpus files hold one JSON object per utterance.
  CHECK(line_count(dir / "a/l1_train.jsonl") == 20);
  CHECK(line_count(dir / "a/l2_test.jsonl") == 4);

  gen_small(dir, "b");
  for (const char* f : {"l1_train.jsonl", "l1_test.jsonl", "l2_train.jsonl",
                        "l2_test.jsonl", "vectors.vec", "stats.json"})
    CHECK_MESSAGE(slurp(dir / (std::string("a/") + f)) ==
                      slurp(dir / (std::string("b/") + f)),
                  f);
  // Manifests may differ in timestamp but agree on the run digest.
  CHECK(load_json(dir / "a/run_manifest.json").at("run_digest") ==
        load_json(dir / "b/run_manifest.json").at("run_digest"));
}

TEST_CASE("gen-synth --low-resource scales only that language's train split") {
  TempDir dir;
  const RunResult r = run(dir,
                          "gen-synth --languages l1,l2 --count 100 --seed 3 "
                          "--dim 8 --low-resource l2=0.1 --out " +
                              (dir / "d"));
  REQUIRE(r.rc == 0);
  CHECK(line_count(dir / "d/l1_train.jsonl") == 100);
  CHECK(line_count(dir / "d/l2_train.jsonl") == 10);
  // Test splits stay full-sized for both languages.
  CHECK(line_count(dir / "d/l1_test.jsonl") == 20);
  CHECK(line_count(dir / "d/l2_test.jsonl") == 20);
}

TEST_CASE("usage errors exit with code 2 and --help with 0") {
  TempDir dir;
  CHECK(run(dir, "gen-synth --languages l1").rc == 2);  // missing --out
  CHECK(run(dir, "no-such-command").rc == 2);
  CHECK(run(dir, "").rc == 2);  // a subcommand is required
  CHECK(run(dir, "--help").rc == 0);
  CHECK(run(dir, "train --help").rc == 0);
  // Unknown transfer mode is rejected before any file is touched.
  CHECK(run(dir, "transfer --source nope.ckpt --mode sideways --train x "
                 "--out " +
                     (dir / "t"))
            .rc == 2);
  // Bad low-resource syntax.
  CHECK(run(dir, "gen-synth --languages l1 --low-resource l1 --out " +
                     (dir / "g"))
            .rc == 2);
  // Unknown model family.
  gen_small(dir, "d", 10);
  CHECK(run(dir, "train --model perceptron --train " + (dir / "d/l1_train.jsonl") +
                     " --out " + (dir / "m"))
            .rc == 2);
}

TEST_CASE("train writes artifacts and identical seeds give identical bytes") {
  TempDir dir;
  gen_small(dir, "d");
  const std::string data = dir / "d";
  const std::string train_cmd =
      "train --model dnn --train " + data + "/l1_train.jsonl " + data +
      "/l2_train.jsonl --vectors " + data + "/vectors.vec --seed 3" +
      tiny_dnn_flags();

  REQUIRE(run(dir, train_cmd + " --out " + (dir / "m1")).rc == 0);
  for (const char* f : {"model.ckpt", "history.json", "run_manifest.json"})
    CHECK_MESSAGE(fs::exists(dir.path / "m1" / f), f);

  const json hist = load_json(dir / "m1/history.json");
  CHECK(hist.at("epochs").size() == 2);
  const json manifest = load_json(dir / "m1/run_manifest.json");
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("toolkit_version") == "0.1.0");
  CHECK(manifest.at("input_digests").size() == 3);  // two corpora + vectors

  // The checkpoint embeds the manifest's run digest, never a timestamp.
  const Checkpoint cp = load_checkpoint(dir / "m1/model.ckpt");
  CHECK(cp.meta.at("provenance").at("run_digest") ==
        manifest.at("run_digest"));
  CHECK(cp.meta.at("provenance").contains("timestamp") == false);

  REQUIRE(run(dir, train_cmd + " --out " + (dir / "m2")).rc == 0);
  CHECK(slurp(dir / "m1/model.ckpt") == slurp(dir / "m2/model.ckpt"));
  CHECK(slurp(dir / "m1/history.json") == slurp(dir / "m2/history.json"));

  REQUIRE(run(dir, "train --model maxent-baseline --train " + data +
                       "/l1_train.jsonl --seed 3 --out " + (dir / "mx"))
              .rc == 0);
  CHECK(load_json(dir / "mx/history.json").contains("final_losses"));
  CHECK(load_checkpoint(dir / "mx/model.ckpt").meta.at("kind") == "maxent");
}

TEST_CASE("a config file fills in defaults but command-line flags win") {
  TempDir dir;
  gen_small(dir, "d", 10);
  spit(dir / "cfg.json",
       R"({"epochs": 2, "hidden": 8, "ic-hidden": 8, "d-word": 8,
           "valid-ratio": 0.0, "batch-size": 8})");

  const RunResult r =
      run(dir, "train --model dnn --train " + (dir / "d/l1_train.jsonl") +
                   " --vectors " + (dir / "d/vectors.vec") + " --config " +
                   (dir / "cfg.json") + " --epochs 3 --seed 1 --out " +
                   (dir / "m"));
  REQUIRE_MESSAGE(r.rc == 0, r.output);
  const json manifest = load_json(dir / "m/run_manifest.json");
  CHECK(manifest.at("resolved_config").at("training").at("max_epochs") == 3);
  CHECK(manifest.at("resolved_config").at("dnn").at("hidden") == 8);
  CHECK(load_json(dir / "m/history.json").at("epochs").size() == 3);

  spit(dir / "bad.json", R"({"no-such-knob": 1})");
  CHECK(run(dir, "train --model dnn --train " + (dir / "d/l1_train.jsonl") +
                     " --config " + (dir / "bad.json") + " --out " +
                     (dir / "m2"))
            .rc == 2);
  spit(dir / "broken.json", "{not json");
  CHECK(run(dir, "train --model dnn --train " + (dir / "d/l1_train.jsonl") +
                     " --config " + (dir / "broken.json") + " --out " +
                     (dir / "m3"))
            .rc == 2);
}

TEST_CASE("eval writes a parsable report and prints the metrics table") {
  TempDir dir;
  gen_small(dir, "d");
  const std::string data = dir / "d";
  REQUIRE(run(dir, "train --model maxent-baseline --train " + data +
                       "/l1_train.jsonl " + data +
                       "/l2_train.jsonl --seed 3 --out " + (dir / "m"))
              .rc == 0);

  const RunResult r =
      run(dir, "eval --model " + (dir / "m/model.ckpt") + " --test " + data +
                   "/l1_test.jsonl " + data +
                   "/l2_test.jsonl --per-language --out " + (dir / "ev"));
  REQUIRE_MESSAGE(r.rc == 0, r.output);
  CHECK(r.output.find("domain accuracy") != std::string::npos);
  CHECK(r.output.find("frame accuracy") != std::string::npos);
  CHECK(r.output.find("l1") != std::string::npos);
  CHECK(r.output.find("l2") != std::string::npos);

  const EvalReport report = report_from_json(slurp(dir / "ev/report.json"));
  CHECK(report.model_id == "model");  // defaults to the file stem
  CHECK(report.overall.utterances == 8);
  CHECK(report.per_language.count("l1") == 1);
  CHECK(report.per_language.count("l2") == 1);
  // The report embeds its manifest's run digest.
  CHECK(load_json(dir / "ev/report.json").at("run_digest") ==
        load_json(dir / "ev/run_manifest.json").at("run_digest"));

  // --model-id overrides the stem; --languages filters the test set.
  const RunResult r2 =
      run(dir, "eval --model " + (dir / "m/model.ckpt") + " --test " + data +
                   "/l1_test.jsonl " + data +
                   "/l2_test.jsonl --languages l1 --model-id tuned --out " +
                   (dir / "ev2"));
  REQUIRE(r2.rc == 0);
  const EvalReport report2 = report_from_json(slurp(dir / "ev2/report.json"));
  CHECK(report2.model_id == "tuned");
  CHECK(report2.overall.utterances == 4);

  // Filtering away every utterance is a data error.
  CHECK(run(dir, "eval --model " + (dir / "m/model.ckpt") + " --test " + data +
                     "/l1_test.jsonl --languages nowhere --out " +
                     (dir / "ev3"))
            .rc == 3);
}

TEST_CASE("transfer records freeze provenance and the ramp horizon") {
  TempDir dir;
  gen_small(dir, "d");
  const std::string data = dir / "d";
  REQUIRE(run(dir, "train --model dnn --train " + data +
                       "/l1_train.jsonl --vectors " + data +
                       "/vectors.vec --seed 3" + tiny_dnn_flags() +
                       " --out " + (dir / "src"))
              .rc == 0);
  const std::string common = " --train " + data + "/l2_train.jsonl --vectors " +
                             data + "/vectors.vec --seed 5" +
                             tiny_loop_flags();

  const RunResult enc = run(dir, "transfer --source " + (dir / "src/model.ckpt") +
                                     " --mode enc" + common + " --out " +
                                     (dir / "enc"));
  REQUIRE_MESSAGE(enc.rc == 0, enc.output);
  const json enc_prov =
      load_checkpoint(dir / "enc/model.ckpt").meta.at("provenance");
  CHECK(enc_prov.at("mode") == "enc");
  CHECK(enc_prov.at("frozen") == json::array({"embeddings", "encoder"}));
  CHECK(load_json(dir / "enc/run_manifest.json")
            .at("resolved_config")
            .at("frozen")
            .size() == 2);

  const RunResult vlr = run(dir, "transfer --source " + (dir / "src/model.ckpt") +
                                     " --mode enc-vlr --unfreeze-steps 4" +
                                     common + " --out " + (dir / "vlr"));
  REQUIRE_MESSAGE(vlr.rc == 0, vlr.output);
  const json vlr_prov =
      load_checkpoint(dir / "vlr/model.ckpt").meta.at("provenance");
  CHECK(vlr_prov.at("mode") == "enc-vlr");
  CHECK(vlr_prov.at("unfreeze_steps") == 4);
  CHECK(vlr_prov.at("source_digest") ==
        std::string(file_digest_hex(dir / "src/model.ckpt")));

  // enc-vlr without a ramp horizon is a configuration error.
  CHECK(run(dir, "transfer --source " + (dir / "src/model.ckpt") +
                     " --mode enc-vlr" + common + " --out " + (dir / "vlr0"))
            .rc == 2);
}

TEST_CASE("encdec transfer without --expand-vocab warns about novel labels") {
  TempDir dir;
  gen_small(dir, "d");
  // Drop one intent from the source corpus, so the target has a novel one.
  Corpus full = load_corpus(dir / "d/l1_train.jsonl");
  const std::string dropped = full.front().intent;
  Corpus filtered;
  for (const AnnotatedUtterance& u : full)
    if (u.intent != dropped) filtered.push_back(u);
  REQUIRE(filtered.size() < full.size());
  write_corpus(dir / "src_train.jsonl", filtered);

  REQUIRE(run(dir, "train --model dnn --train " + (dir / "src_train.jsonl") +
                       " --vectors " + (dir / "d/vectors.vec") + " --seed 3" +
                       tiny_dnn_flags() + " --out " + (dir / "src"))
              .rc == 0);

  const std::string common =
      " --train " + (dir / "d/l1_train.jsonl") + " --vectors " +
      (dir / "d/vectors.vec") + " --seed 5" + tiny_loop_flags();
  const RunResult closed =
      run(dir, "transfer --source " + (dir / "src/model.ckpt") +
                   " --mode encdec" + common + " --out " + (dir / "closed"));
  REQUIRE_MESSAGE(closed.rc == 0, closed.output);
  CHECK(closed.output.find("cannot predict") != std::string::npos);
  CHECK(closed.output.find(dropped) != std::string::npos);
  const json closed_prov =
      load_checkpoint(dir / "closed/model.ckpt").meta.at("provenance");
  CHECK(closed_prov.at("novel_intents") == json::array({dropped}));

  const RunResult open =
      run(dir, "transfer --source " + (dir / "src/model.ckpt") +
                   " --mode encdec --expand-vocab" + common + " --out " +
                   (dir / "open"));
  REQUIRE_MESSAGE(open.rc == 0, open.output);
  CHECK(open.output.find("cannot predict") == std::string::npos);
  // The expanded model's inventory now covers the dropped intent.
  const json vocab = load_checkpoint(dir / "open/model.ckpt").meta.at("vocab");
  const auto& intents = vocab.at("intents");
  CHECK(std::find(intents.begin(), intents.end(), json(dropped)) !=
        intents.end());
}

TEST_CASE("compare reports unit ratios on itself and rejects foreign digests") {
  TempDir dir;
  gen_small(dir, "d");
  const std::string data = dir / "d";
  REQUIRE(run(dir, "train --model maxent-baseline --train " + data +
                       "/l1_train.jsonl --seed 3 --out " + (dir / "m"))
              .rc == 0);
  REQUIRE(run(dir, "eval --model " + (dir / "m/model.ckpt") + " --test " +
                       data + "/l1_test.jsonl --out " + (dir / "ev"))
              .rc == 0);

  const RunResult self =
      run(dir, "compare --baseline " + (dir / "ev/report.json") +
                   " --candidate " + (dir / "ev/report.json") + " --out " +
                   (dir / "cmp"));
  REQUIRE_MESSAGE(self.rc == 0, self.output);
  const json cmp = load_json(dir / "cmp/comparison.json");
  for (const auto& [metric, row] : cmp.at("metrics").items()) {
    INFO(metric);
    CHECK(row.at("ratio") == doctest::Approx(1.0));
  }
  CHECK(self.output.find("1.000") != std::string::npos);

  // A report on a different test set cannot be compared.
  REQUIRE(run(dir, "eval --model " + (dir / "m/model.ckpt") + " --test " +
                       data + "/l2_test.jsonl --out " + (dir / "ev2"))
              .rc == 0);
  CHECK(run(dir, "compare --baseline " + (dir / "ev/report.json") +
                     " --candidate " + (dir / "ev2/report.json") + " --out " +
                     (dir / "cmp2"))
            .rc == 3);
}

TEST_CASE("bench times every model over --runs and normalizes by the reference") {
  TempDir dir;
  gen_small(dir, "d", 10);
  const std::string data = dir / "d";
  REQUIRE(run(dir, "train --model dnn --train " + data +
                       "/l1_train.jsonl --vectors " + data +
                       "/vectors.vec --seed 3" + tiny_dnn_flags() +
                       " --out " + (dir / "m1"))
              .rc == 0);
  REQUIRE(run(dir, "train --model maxent-baseline --train " + data +
                       "/l1_train.jsonl --seed 3 --out " + (dir / "m2"))
              .rc == 0);
  fs::copy_file(dir.path / "m1/model.ckpt", dir.path / "dnn.ckpt");
  fs::copy_file(dir.path / "m2/model.ckpt", dir.path / "maxent.ckpt");

  const RunResult r =
      run(dir, "bench --model " + (dir / "dnn.ckpt") + " " +
                   (dir / "maxent.ckpt") + " --test " + data +
                   "/l1_test.jsonl --runs 3 --out " + (dir / "bn"));
  REQUIRE_MESSAGE(r.rc == 0, r.output);
  const json bench = load_json(dir / "bn/bench.json");
  REQUIRE(bench.at("entries").size() == 2);
  for (const json& e : bench.at("entries")) {
    REQUIRE(e.at("run_seconds").size() == 3);
    double sum = 0.0;
    for (const json& s : e.at("run_seconds")) sum += s.get<double>();
    CHECK(e.at("mean_seconds").get<double>() ==
          doctest::Approx(sum / 3.0).epsilon(1e-12));
  }
  CHECK(bench.at("entries")[0].at("model_id") == "dnn");
  CHECK(bench.at("reference_id") == "dnn");
  CHECK(bench.at("entries")[0].at("runtime_rel").get<double>() ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.output.find("rel") != std::string::npos);
}

TEST_CASE("damaged checkpoints exit with the compatibility code") {
  TempDir dir;
  gen_small(dir, "d", 10);
  REQUIRE(run(dir, "train --model maxent-baseline --train " +
                       (dir / "d/l1_train.jsonl") + " --seed 3 --out " +
                       (dir / "m"))
              .rc == 0);
  const std::string eval_tail =
      " --test " + (dir / "d/l1_test.jsonl") + " --out " + (dir / "ev");

  std::string bytes = slurp(dir / "m/model.ckpt");
  REQUIRE(bytes.size() > 64);

  std::string corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x40;  // breaks the trailing checksum
  spit(dir / "corrupt.ckpt", corrupt);
  CHECK(run(dir, "eval --model " + (dir / "corrupt.ckpt") + eval_tail).rc == 4);

  std::string wrong_version = bytes;
  wrong_version[8] = 9;  // first byte of the little-endian version word
  spit(dir / "newver.ckpt", wrong_version);
  CHECK(run(dir, "eval --model " + (dir / "newver.ckpt") + eval_tail).rc == 4);

  CHECK(run(dir, "eval --model " + (dir / "missing.ckpt") + eval_tail).rc == 4);
}
