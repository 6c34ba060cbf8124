#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragate/core.hpp"
#include "ragate/experiment.hpp"
#include "ragate/retrieval.hpp"

using namespace ragate;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "ragate-cli-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const TempDir& tmp, const std::vector<std::string>& args) {
  static int counter = 0;
  fs::path out_file = tmp.path / ("stdout-" + std::to_string(counter) + ".txt");
  fs::path err_file = tmp.path / ("stderr-" + std::to_string(counter) + ".txt");
  ++counter;

  std::string cmd = std::string("'") + RAGATE_BIN + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " > '" + out_file.string() + "' 2> '" + err_file.string() + "'";

  int status = std::system(cmd.c_str());
  CliResult res;
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  res.out = slurp(out_file);
  res.err = slurp(err_file);
  return res;
}

std::string fixture(const std::string& rel) {
  return (fs::path(RAGATE_FIXTURES) / rel).string();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void run_stages(const TempDir& tmp, const std::string& config, const std::string& out_dir,
                const std::vector<std::string>& stages) {
  for (const auto& stage : stages) {
    CAPTURE(stage);
    CliResult res = run_cli(tmp, {stage, "--config", fixture(config), "--override",
                                  "output_dir=" + out_dir});
    CAPTURE(res.err);
    REQUIRE(res.code == 0);
  }
}

}  // namespace

TEST_CASE("index command builds a loadable bm25 index") {
  TempDir tmp;
  std::string out = tmp.str("index.json");
  CliResult res = run_cli(tmp, {"index", "--corpus", fixture("corpus.jsonl"), "--out", out});
  CHECK(res.code == 0);
  REQUIRE(fs::exists(out));

  Bm25Index index = Bm25Index::load(out);
  CHECK(index.size() == 200);
  CHECK(index.find("doc-000") != nullptr);
}

TEST_CASE("stage pipeline writes artifacts and reproducible reports") {
  TempDir tmp;
  std::string out = tmp.str("out");
  run_stages(tmp, "config.json", out,
             {"generate", "score", "fit", "run", "eval", "complexity", "report"});

  // generate: one manifest entry per prompt per example, sorted
  nlohmann::json manifest = nlohmann::json::parse(slurp(out + "/generate_manifest.json"));
  CHECK(manifest.at("count") == 600);  // (100 train + 100 test) x 3 prompt kinds
  CHECK(manifest.at("keys").size() == 600);

  // score and fit artifacts
  CHECK(fs::exists(out + "/scores_toy_train.jsonl"));
  CHECK(fs::exists(out + "/scores_toy_test.jsonl"));
  CHECK(fs::exists(out + "/models/toy/max_entropy/threshold.json"));
  CHECK(fs::exists(out + "/models/toy/max_entropy/selection.json"));

  nlohmann::json selection = nlohmann::json::parse(slurp(out + "/models/toy/max_entropy/selection.json"));
  CHECK(selection.at("chosen_kind") == "threshold");
  CHECK(selection.at("report").at("mode") == "holdout");
  CHECK(selection.at("report").at("note") ==
        "selected on a holdout slice reserved from the training split");

  // run: a record per test example for every strategy, billing intact
  for (const std::string tag : {"never", "always", "ideal", "adaptive_max_entropy"}) {
    auto records = read_jsonl<RunRecord>(out + "/runs_toy_" + tag + ".jsonl");
    REQUIRE(records.size() == 100);
    for (const auto& rec : records) {
      CAPTURE(tag);
      CAPTURE(rec.example_id);
      CHECK(rec.error.empty());
      CHECK(validate_run_record(rec).empty());
    }
  }

  // eval: metrics in all three formats with the protocol columns
  nlohmann::json metrics = nlohmann::json::parse(slurp(out + "/metrics.json"));
  CHECK(metrics.at("datasets") == nlohmann::json::array({"toy"}));
  const auto& toy = metrics.at("values").at(0);
  CHECK(toy.at("Never RAG").at("RC") == 0.0);
  CHECK(toy.at("Never RAG").at("LMC") == 1.0);
  CHECK(toy.at("Always RAG").at("RC") == 1.0);
  CHECK(toy.at("Always RAG").at("LMC") == 1.0);
  CHECK(toy.at("Ideal").contains("InAcc"));
  CHECK(toy.contains("max_entropy"));
  CHECK(slurp(out + "/metrics.csv").rfind("dataset,method,metric,value", 0) == 0);
  CHECK(fs::exists(out + "/metric_correlation.csv"));
  // rank tables need a second uncertainty method; none with one estimator
  CHECK_FALSE(fs::exists(out + "/ranks_inacc.csv"));

  // complexity and report
  CHECK(fs::exists(out + "/complexity_rademacher.csv"));
  CHECK(fs::exists(out + "/complexity.json"));
  std::string report = slurp(out + "/report.md");
  CHECK(report.find("## toy") != std::string::npos);

  // rerunning downstream stages is byte-identical
  std::string metrics_json = slurp(out + "/metrics.json");
  std::string metrics_csv = slurp(out + "/metrics.csv");
  std::string metrics_md = slurp(out + "/metrics.md");
  run_stages(tmp, "config.json", out, {"eval", "report"});
  CHECK(slurp(out + "/metrics.json") == metrics_json);
  CHECK(slurp(out + "/metrics.csv") == metrics_csv);
  CHECK(slurp(out + "/metrics.md") == metrics_md);
  CHECK(slurp(out + "/report.md") == report);
}

TEST_CASE("missing upstream artifacts name the producer stage and exit 3") {
  TempDir tmp;
  CliResult res = run_cli(tmp, {"fit", "--config", fixture("config.json"), "--override",
                                "output_dir=" + tmp.str("empty-out")});
  CHECK(res.code == 3);
  CHECK(res.err.find("run the score stage first") != std::string::npos);

  CliResult eval = run_cli(tmp, {"eval", "--config", fixture("config.json"), "--override",
                                 "output_dir=" + tmp.str("empty-out")});
  CHECK(eval.code == 3);
}

TEST_CASE("config and data problems exit 2") {
  TempDir tmp;

  CliResult missing = run_cli(tmp, {"score", "--config", tmp.str("nope.json")});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("config file not found") != std::string::npos);

  std::ofstream bad_json(tmp.str("bad.json"));
  bad_json << "{ not json";
  bad_json.close();
  CliResult parse = run_cli(tmp, {"score", "--config", tmp.str("bad.json")});
  CHECK(parse.code == 2);
  CHECK(parse.err.find("config parse error") != std::string::npos);

  // ad-hoc run over a malformed dataset reports the offending line
  std::ofstream bad_data(tmp.str("bad.jsonl"));
  bad_data << "{\"id\": \"q1\"\n";
  bad_data.close();
  CliResult data = run_cli(tmp, {"run", "--config", fixture("config.json"), "--override",
                                 "output_dir=" + tmp.str("out"), "--strategy", "never",
                                 "--dataset", tmp.str("bad.jsonl")});
  CHECK(data.code == 2);
  CHECK(data.err.find("line 1") != std::string::npos);

  // adaptive ad-hoc runs need both the estimator and the decider file
  CliResult adaptive = run_cli(tmp, {"run", "--config", fixture("config.json"), "--override",
                                     "output_dir=" + tmp.str("out"), "--strategy", "adaptive",
                                     "--dataset", fixture("test.jsonl")});
  CHECK(adaptive.code == 2);
  CHECK(adaptive.err.find("--estimator and --decider") != std::string::npos);

  // single-dataset configs cannot run the transfer stage
  CliResult ood = run_cli(tmp, {"ood", "--config", fixture("config.json"), "--override",
                                "output_dir=" + tmp.str("out")});
  CHECK(ood.code == 2);
  CHECK(ood.err.find("needs at least two datasets") != std::string::npos);
}

TEST_CASE("unreachable retrieval endpoints exit 4") {
  TempDir tmp;
  std::ofstream data(tmp.str("tiny.jsonl"));
  data << R"({"id":"t1","question":"What color is the bax?","golds":["amber"],"dataset":"tiny","hop_class":"single"})"
       << "\n";
  data.close();

  nlohmann::json cfg = {
      {"datasets", {{{"name", "tiny"}, {"train", "tiny.jsonl"}, {"test", "tiny.jsonl"}}}},
      {"corpus", fixture("corpus.jsonl")},
      {"mock_llm", fixture("mock.json")},
      {"retriever_endpoint", "http://127.0.0.1:9/search"},
      {"estimators", {"max_entropy"}},
      {"output_dir", "out"},
  };
  std::ofstream cfg_file(tmp.str("remote.json"));
  cfg_file << cfg.dump(2);
  cfg_file.close();

  CliResult res = run_cli(tmp, {"generate", "--config", tmp.str("remote.json")});
  CHECK(res.code == 4);
  CHECK(res.err.find("rerun to resume") != std::string::npos);
}

TEST_CASE("ad-hoc runs stream one record per line to stdout") {
  TempDir tmp;
  CliResult res = run_cli(tmp, {"run", "--config", fixture("config.json"), "--override",
                                "output_dir=" + tmp.str("out"), "--strategy", "never",
                                "--dataset", fixture("test.jsonl")});
  REQUIRE(res.code == 0);
  std::vector<std::string> lines = lines_of(res.out);
  REQUIRE(lines.size() == 100);
  for (const auto& line : lines) {
    RunRecord rec = nlohmann::json::parse(line).get<RunRecord>();
    CHECK(rec.strategy == Strategy::Never);
    CHECK(rec.lm_calls == 1);
    CHECK(rec.retrieval_calls == 0);
    CHECK_FALSE(rec.answer.empty());
  }
}

TEST_CASE("multi dataset pipeline covers transfer and sensitivity outputs") {
  TempDir tmp;
  std::string out = tmp.str("out-multi");
  run_stages(tmp, "config_multi.json", out,
             {"generate", "score", "fit", "run", "eval", "ood", "complexity", "report"});

  for (const std::string method : {"max_entropy", "perplexity", "hybrid"}) {
    CHECK(fs::exists(out + "/ood_" + method + ".csv"));
  }
  nlohmann::json stats = nlohmann::json::parse(slurp(out + "/ood_stats.json"));
  CHECK(stats.contains("friedman"));

  CHECK(fs::exists(out + "/ranks_inacc.csv"));
  CHECK(fs::exists(out + "/classifier_sensitivity.csv"));
  CHECK(fs::exists(out + "/feature_importance_toy.json"));
  CHECK(fs::exists(out + "/feature_importance_toy2.json"));
  CHECK(fs::exists(out + "/models/toy/hybrid_stats.json"));
  CHECK(fs::exists(out + "/models/toy/hybrid/logreg.json"));

  nlohmann::json metrics = nlohmann::json::parse(slurp(out + "/metrics.json"));
  CHECK(metrics.at("datasets") == nlohmann::json::array({"toy", "toy2"}));
  CHECK(metrics.at("values").at(0).contains("hybrid"));
  CHECK(metrics.at("values").at(1).contains("hybrid"));
}

TEST_CASE("config overrides follow dotted paths") {
  ExperimentConfig cfg = load_config(
      fixture("config.json"),
      {"seed=777", "estimator_params.alpha=3.5", "datasets.0.name=renamed", "output_dir=o2"});
  CHECK(cfg.seed == 777);
  CHECK(cfg.estimator_params.alpha == 3.5);
  REQUIRE(cfg.datasets.size() == 1);
  CHECK(cfg.datasets[0].name == "renamed");
  CHECK(cfg.output_dir == "o2");

  // bare strings survive unquoted, json values parse
  nlohmann::json j = {{"a", {{"b", nlohmann::json::array({1, 2})}}}};
  apply_override(j, "a.b.1=9");
  CHECK(j["a"]["b"][1] == 9);
  apply_override(j, "a.c=hello");
  CHECK(j["a"]["c"] == "hello");

  CHECK_THROWS_AS(apply_override(j, "missing-equals"), Error);
  CHECK_THROWS_AS(load_config(fixture("config.json"), {"=5"}), Error);
}
