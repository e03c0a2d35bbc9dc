// Drives the installed binary as a child process over a small fixture corpus
// and inspects the artifacts each subcommand leaves behind. PATHTEXT_BIN is
// injected by the build so the tests always exercise the freshly built tool.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "pathtext/corpus.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pathtext;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

const fs::path& ws() {
  static const fs::path p = [] {
    fs::path q = fs::temp_directory_path() / "pathtext_cli_suite";
    fs::remove_all(q);
    fs::create_directories(q);
    return q;
  }();
  return p;
}

Run run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out_f = ws() / ("stdout." + std::to_string(counter));
  const fs::path err_f = ws() / ("stderr." + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(PATHTEXT_BIN) + " " + args + " >" + out_f.string() +
                          " 2>" + err_f.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_f);
  r.err = slurp(err_f);
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE_MESSAGE(f.good(), "missing " << p.string());
  return json::parse(f);
}

const std::vector<std::string> kTrees = {"alder", "birch", "cedar",   "dogwood",
                                         "elm",   "fir",   "juniper", "hazel"};

// 12 unique items per list. Pair texts and relations are disjoint from the
// standalone lists so the leakage pass removes nothing and the split counts
// are exact. Two underweight paths probe the strictly-above filter.
void write_raw_corpus() {
  static bool done = false;
  if (done) return;
  done = true;
  std::vector<corpus::RawSentence> sentences;
  std::vector<corpus::RawPath> paths;
  std::vector<corpus::RawPair> pairs;
  for (int i = 0; i < 12; ++i) {
    const std::string& a = kTrees[i % 8];
    const std::string& b = kTrees[(i + 1) % 8];
    sentences.push_back({"the " + a + " grows near the " + b});
    if (i < 8) {
      paths.push_back({a, "grows near", b, 2.0});
    } else {
      paths.push_back({a, "shades", kTrees[(i + 2) % 8], 2.0});
    }
    const std::string& c = kTrees[(i + (i < 8 ? 3 : 5)) % 8];
    pairs.push_back({"the " + a + " shelters the " + c, a, "shelters", c, 1.0});
  }
  paths.push_back({"alder", "grows near", "hazel", 1.6});
  paths.push_back({"birch", "grows near", "elm", 1.5});
  corpus::write_sentences_jsonl((ws() / "sentences.jsonl").string(), sentences);
  corpus::write_paths_jsonl((ws() / "paths.jsonl").string(), paths);
  corpus::write_pairs_jsonl((ws() / "pairs.jsonl").string(), pairs);
}

Run g_build{-2, "", ""};

fs::path dataset_dir() {
  const fs::path dir = ws() / "data";
  if (g_build.code == -2) {
    write_raw_corpus();
    g_build = run_cli("build-dataset --sentences " + (ws() / "sentences.jsonl").string() +
                      " --paths " + (ws() / "paths.jsonl").string() + " --pairs " +
                      (ws() / "pairs.jsonl").string() + " --out " + dir.string());
  }
  REQUIRE_MESSAGE(g_build.code == 0, g_build.err);
  return dir;
}

Run g_train{-2, "", ""};

// one 2-epoch run shared by the eval, transfer, and resume cases
fs::path base_run_dir() {
  const fs::path dir = ws() / "run";
  if (g_train.code == -2) {
    g_train = run_cli("train --data " + dataset_dir().string() + " --out " + dir.string() +
                      " --hidden 8 --max-len 16 --epochs 2 --seed 5 --batch-size 4");
  }
  REQUIRE_MESSAGE(g_train.code == 0, g_train.err);
  return dir;
}

std::string base_ckpt() {
  const json summary = read_json(base_run_dir() / "summary.json");
  const std::string ckpt = summary["best_mrr_path"];
  REQUIRE(fs::exists(ckpt));
  return ckpt;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("version and help exit cleanly") {
  const Run v = run_cli("--version");
  CHECK(v.code == 0);
  CHECK(contains(v.out, "0.1.0"));
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --help").code == 0);
}

TEST_CASE("build-dataset filters by weight, splits exactly, and stamps the run") {
  const fs::path d = dataset_dir();
  const json manifest = read_json(d / "manifest.json");
  CHECK(manifest["dropped_paths_below_weight"] == 2);
  CHECK(manifest["min_weight"] == 1.6);
  for (const char* split : {"train", "dev", "test"}) {
    const int want = std::string(split) == "train" ? 10 : 1;
    for (const char* list : {"sentences", "paths", "pairs"}) {
      CHECK_MESSAGE(manifest["counts"][split][list] == want, split << "." << list);
      const fs::path f = d / (std::string(split) + "." + list + ".jsonl");
      CHECK_MESSAGE(static_cast<int>(lines_of(f).size()) == want, f.string());
    }
    CHECK(manifest[std::string("removed_") + split] ==
          json({{"sentences", 0}, {"paths", 0}, {"pairs", 0}}));
  }
  CHECK(manifest["vocab_size"].get<int>() > 6);
  CHECK(fs::exists(d / "vocab.txt"));
  CHECK(fs::exists(d / "enforce_report.json"));
  CHECK(fs::exists(d / "config.ini"));
  CHECK(contains(g_build.out, "dropped 2"));

  // 1.6 sits on the boundary and must not survive the strictly-above filter
  for (const char* split : {"train", "dev", "test"}) {
    const auto kept = corpus::load_paths_jsonl(
        (d / (std::string(split) + ".paths.jsonl")).string(),
        -std::numeric_limits<double>::infinity());
    for (const auto& p : kept) CHECK(p.weight > 1.6);
  }
}

TEST_CASE("manifest removed counts ignore lines the build already filtered") {
  const fs::path d = dataset_dir();
  const json report = read_json(d / "enforce_report.json");
  CHECK(report["dev"]["pairs"] == 0);
  CHECK(report["test"]["pairs"] == 0);
}

TEST_CASE("match pairs sentences with paths above the threshold") {
  write_raw_corpus();
  const fs::path out = ws() / "matched";
  const Run r = run_cli("match --sentences " + (ws() / "sentences.jsonl").string() +
                        " --paths " + (ws() / "paths.jsonl").string() + " --out " +
                        out.string() + " --threshold 0.35");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = read_json(out / "match_report.json");
  CHECK(report["n_sentences"] == 12);
  CHECK(report["n_paths"] == 14);  // match keeps every weight by default
  CHECK(report["threshold"] == 0.35);
  const auto pairs = corpus::load_pairs_jsonl((out / "pairs.jsonl").string());
  CHECK(pairs.size() == report["n_pairs"].get<size_t>());
  CHECK(pairs.size() >= 8);
  for (const auto& p : pairs) {
    CHECK(p.score >= 0.35);
    CHECK(p.score <= 1.0 + 1e-9);
    CHECK(!p.text.empty());
    CHECK(!p.head.empty());
  }
}

TEST_CASE("train writes metrics, checkpoints, and a replayable config") {
  const fs::path run = base_run_dir();
  const auto metrics = lines_of(run / "metrics.jsonl");
  REQUIRE(metrics.size() == 2);
  for (size_t i = 0; i < metrics.size(); ++i) {
    const json line = json::parse(metrics[i]);
    CHECK(line["epoch"] == static_cast<int>(i) + 1);
    CHECK(line["loss_total"].get<double>() > 0.0);
  }
  const json summary = read_json(run / "summary.json");
  CHECK(summary["epochs"] == 2);
  CHECK(fs::exists(summary["best_mrr_path"].get<std::string>()));
  CHECK(fs::exists(summary["best_bleu2_path"].get<std::string>()));
  CHECK(fs::exists(summary["state_path"].get<std::string>()));
  CHECK(summary["final"]["epoch"] == 2);

  const std::string stamp = slurp(run / "config.ini");
  CHECK(contains(stamp, "# pathtext 0.1.0"));
  CHECK(contains(stamp, "[train]"));
  CHECK(contains(stamp, "epochs=2"));
  CHECK(contains(stamp, "hidden=8"));
  CHECK(contains(slurp(run / "train.md"), "| epoch |"));
}

TEST_CASE("config file values apply and command line flags override them") {
  const fs::path d = dataset_dir();
  const fs::path run_a = ws() / "cfg_run_a";
  const fs::path cfg_a = ws() / "a.ini";
  std::ofstream(cfg_a) << "[train]\ndata=\"" << d.string() << "\"\nout=\"" << run_a.string()
                       << "\"\nepochs=1\nhidden=8\nmax-len=16\nbatch-size=4\n";
  const Run a = run_cli("train --config " + cfg_a.string());
  REQUIRE_MESSAGE(a.code == 0, a.err);
  CHECK(lines_of(run_a / "metrics.jsonl").size() == 1);

  const fs::path run_b = ws() / "cfg_run_b";
  const Run b = run_cli("train --config " + cfg_a.string() + " --out " + run_b.string() +
                        " --epochs 2");
  REQUIRE_MESSAGE(b.code == 0, b.err);
  CHECK(lines_of(run_b / "metrics.jsonl").size() == 2);

  // the stamped config of a finished run replays as-is
  const fs::path run_c = ws() / "cfg_run_c";
  std::string replay = slurp(run_a / "config.ini");
  const auto at = replay.find(run_a.string());
  REQUIRE(at != std::string::npos);
  replay.replace(at, run_a.string().size(), run_c.string());
  const fs::path cfg_c = ws() / "c.ini";
  std::ofstream(cfg_c) << replay;
  const Run c = run_cli("train --config " + cfg_c.string());
  REQUIRE_MESSAGE(c.code == 0, c.err);
  CHECK(lines_of(run_c / "metrics.jsonl").size() == 1);
}

TEST_CASE("resume continues epoch numbering from the saved state") {
  const fs::path run = base_run_dir();
  const fs::path resumed = ws() / "resumed";
  const Run r = run_cli("train --data " + dataset_dir().string() + " --out " +
                        resumed.string() + " --resume " +
                        (run / "trainer_state.ckpt").string() + " --epochs 3");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto metrics = lines_of(resumed / "metrics.jsonl");
  REQUIRE(metrics.size() == 1);
  CHECK(json::parse(metrics[0])["epoch"] == 3);

  const Run missing = run_cli("train --data " + dataset_dir().string() +
                              " --out x --resume nope.ckpt");
  CHECK(missing.code == 2);
  CHECK(json::parse(missing.err)["error"] == "ConfigError");
}

TEST_CASE("eval-kbc ranks the dev and test splits") {
  const std::string ckpt = base_ckpt();
  for (const char* split : {"dev", "test"}) {
    const fs::path out = ws() / (std::string("kbc_") + split);
    const Run r = run_cli("eval-kbc --ckpt " + ckpt + " --data " + dataset_dir().string() +
                          " --out " + out.string() + " --split " + split);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json m = read_json(out / "kbc_metrics.json");
    CHECK(m["split"] == split);
    CHECK(m["n_queries"] == 2);  // one path per held-out split, two directions
    CHECK(m["n_malformed"] == 0);
    const double mrr = m["mrr"].get<double>();
    CHECK(mrr >= 0.0);
    CHECK(mrr <= 100.0);
    CHECK(m["hits1"].get<double>() <= m["hits3"].get<double>());
    CHECK(m["hits3"].get<double>() <= m["hits10"].get<double>());
    CHECK(fs::exists(out / "kbc.md"));
  }
}

TEST_CASE("eval-text scores both generation directions") {
  const std::string ckpt = base_ckpt();
  for (const char* dir : {"ba", "ab"}) {
    const fs::path out = ws() / (std::string("text_") + dir);
    const Run r = run_cli("eval-text --ckpt " + ckpt + " --data " + dataset_dir().string() +
                          " --out " + out.string() + " --direction " + dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json m = read_json(out / "text_metrics.json");
    CHECK(m["direction"] == dir);
    CHECK(m["n"] == 1);  // the dev split holds one pair
    for (const char* k : {"bleu2", "bleu3", "rouge_l"}) {
      CHECK(m[k].get<double>() >= 0.0);
      CHECK(m[k].get<double>() <= 1.0);
    }
  }
}

TEST_CASE("transfer writes one generation per input") {
  write_raw_corpus();
  const std::string ckpt = base_ckpt();
  const std::string vocab = (dataset_dir() / "vocab.txt").string();

  const fs::path out_ab = ws() / "gen_ab";
  const fs::path dot = ws() / "gen.dot";
  const Run ab = run_cli("transfer --ckpt " + ckpt + " --vocab " + vocab + " --input " +
                         (ws() / "sentences.jsonl").string() + " --out " + out_ab.string() +
                         " --direction ab --dot " + dot.string());
  REQUIRE_MESSAGE(ab.code == 0, ab.err);
  const auto gen = lines_of(out_ab / "generations.jsonl");
  CHECK(gen.size() == 12);
  for (const auto& line : gen) {
    const json j = json::parse(line);
    CHECK(j["direction"] == "ab");
    CHECK(!j["input"].get<std::string>().empty());
    CHECK((j.contains("output") || j.contains("error")));
    if (j.contains("output")) CHECK((j.contains("head") || j.contains("parse_error")));
  }
  CHECK(contains(slurp(dot), "digraph"));

  // path-side input drives the text and denoising directions
  for (const char* dir : {"ba", "bmb"}) {
    const fs::path out = ws() / (std::string("gen_") + dir);
    const Run r = run_cli("transfer --ckpt " + ckpt + " --vocab " + vocab + " --input " +
                          (dataset_dir() / "dev.paths.jsonl").string() + " --out " +
                          out.string() + " --direction " + dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(lines_of(out / "generations.jsonl").size() == 1);
  }

  const Run bad = run_cli("transfer --ckpt " + ckpt + " --vocab " + vocab + " --input " +
                          (ws() / "sentences.jsonl").string() +
                          " --out x --direction ba --dot nope.dot");
  CHECK(bad.code == 2);
}

TEST_CASE("ged of a path file against itself is zero") {
  const fs::path train_paths = dataset_dir() / "train.paths.jsonl";
  const fs::path out = ws() / "ged_self";
  const fs::path dot_r = ws() / "ref.dot";
  const Run r = run_cli("ged --reference " + train_paths.string() + " --generated " +
                        train_paths.string() + " --out " + out.string() +
                        " --chunk-size 4 --dot-reference " + dot_r.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = read_json(out / "ged_report.json");
  CHECK(report["mean"] == 0.0);
  CHECK(report["chunk_size"] == 4);
  REQUIRE(report["chunk_values"].size() == 3);  // ceil(10 / 4)
  for (const auto& v : report["chunk_values"]) CHECK(v == 0);
  CHECK(contains(slurp(out / "ged.md"), "mean"));
  CHECK(contains(slurp(dot_r), "digraph"));
}

TEST_CASE("sweep-rho covers the default grid") {
  const fs::path out = ws() / "sweep";
  const Run r = run_cli("sweep-rho --data " + dataset_dir().string() + " --out " +
                        out.string() + " --hidden 8 --max-len 16 --epochs 1 --batch-size 4");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = lines_of(out / "sweep.jsonl");
  REQUIRE(rows.size() == 4);
  const std::vector<double> want = {0.0, 0.2, 0.8, 1.0};
  for (size_t i = 0; i < rows.size(); ++i) {
    const json j = json::parse(rows[i]);
    CHECK(j["rho"] == want[i]);
    CHECK(j["best_mrr"].get<double>() >= 0.0);
  }
  for (const char* sub : {"rho_0", "rho_0.2", "rho_0.8", "rho_1"}) {
    CHECK_MESSAGE(fs::exists(out / sub / "metrics.jsonl"), sub);
  }
  CHECK(fs::exists(out / "sweep.md"));
}

TEST_CASE("ablate trains the four loss subsets") {
  const fs::path out = ws() / "ablate";
  const Run r = run_cli("ablate --data " + dataset_dir().string() + " --out " + out.string() +
                        " --hidden 8 --max-len 16 --epochs 1 --batch-size 4 --rho 0.5");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = lines_of(out / "ablate.jsonl");
  REQUIRE(rows.size() == 4);
  const std::vector<std::string> want = {"rec+bt+sup", "bt+sup", "rec+bt", "rec+sup"};
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(json::parse(rows[i])["losses"] == want[i]);
  }
  for (const char* sub : {"rec_bt_sup", "bt_sup", "rec_bt", "rec_sup"}) {
    CHECK_MESSAGE(fs::exists(out / sub / "metrics.jsonl"), sub);
  }
}

TEST_CASE("errors map to exit codes with json diagnostics") {
  write_raw_corpus();
  const std::string paths = (ws() / "paths.jsonl").string();

  const Run missing = run_cli("match --sentences " + (ws() / "no_such.jsonl").string() +
                              " --paths " + paths + " --out x");
  CHECK(missing.code == 2);
  CHECK(json::parse(missing.err)["error"] == "ConfigError");

  const fs::path broken = ws() / "broken.jsonl";
  std::ofstream(broken) << "not json\n";
  const Run malformed = run_cli("match --sentences " + broken.string() + " --paths " + paths +
                                " --out x");
  CHECK(malformed.code == 3);
  const json diag = json::parse(malformed.err);
  CHECK(diag["error"] == "DataError");
  CHECK(contains(diag["message"].get<std::string>(), ":1:"));

  const Run bad_rho = run_cli("train --data " + dataset_dir().string() + " --out x --rho 1.5");
  CHECK(bad_rho.code == 2);
  CHECK(contains(json::parse(bad_rho.err)["message"].get<std::string>(), "rho"));

  const Run all_off = run_cli("train --data " + dataset_dir().string() +
                              " --out x --no-rec --no-bt --no-sup");
  CHECK(all_off.code == 2);

  const fs::path empty_dir = ws() / "empty";
  fs::create_directories(empty_dir);
  const Run not_dataset = run_cli("train --data " + empty_dir.string() + " --out x");
  CHECK(not_dataset.code == 3);
  CHECK(json::parse(not_dataset.err)["error"] == "DataError");

  CHECK(run_cli("no-such-command").code == 2);
}

TEST_SUITE_END();
