// ragate: uncertainty-gated adaptive retrieval workbench.
//
// Stage form:  ragate <stage> --config <path> [--override key=value]...
// Ad-hoc run:  ragate run --config <path> --dataset <path> --strategy <s>
//              [--estimator <id> --decider <model file>]  (records to stdout)
// Index build: ragate index --corpus <path> --out <path>
//
// Exit codes: 0 success, 2 config or data error, 3 upstream artifact missing,
// 4 endpoint failure, 1 anything else.

#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ragate/core.hpp"
#include "ragate/deciders.hpp"
#include "ragate/experiment.hpp"
#include "ragate/pipeline.hpp"
#include "ragate/retrieval.hpp"

namespace {

int exit_code_for(ragate::ErrorKind kind) {
  switch (kind) {
    case ragate::ErrorKind::Config:
    case ragate::ErrorKind::Data:
      return 2;
    case ragate::ErrorKind::MissingArtifact:
      return 3;
    case ragate::ErrorKind::Transport:
      return 4;
    case ragate::ErrorKind::Internal:
      return 1;
  }
  return 1;
}

void run_adhoc(ragate::Experiment& exp, const std::string& dataset_path,
               const std::string& strategy_name, const std::string& estimator,
               const std::string& decider_path) {
  using namespace ragate;
  Strategy strategy = strategy_from_name(strategy_name);
  auto examples = read_jsonl<QAExample>(dataset_path);
  PipelineEnv env = exp.env();

  std::optional<DeciderModel> model;
  std::optional<ScoreContext> ctx;
  if (strategy == Strategy::Adaptive) {
    if (estimator.empty() || decider_path.empty()) {
      throw Error(ErrorKind::Config, "adaptive runs need --estimator and --decider");
    }
    model = DeciderModel::load(decider_path);
    // No per-dataset fits here; density estimators degrade to recorded rows.
    ScoreContext base;
    base.sim.kind = exp.config().similarity_kind == "external"
                        ? SimilarityFn::Kind::ExternalScorer
                        : SimilarityFn::Kind::LexicalTokenF1;
    base.sim.endpoint = exp.config().similarity_endpoint;
    base.params = exp.config().estimator_params;
    ctx = std::move(base);
  }

  for (const auto& ex : examples) {
    RunRecord rec;
    try {
      switch (strategy) {
        case Strategy::Never:
          rec = run_never(env, ex);
          break;
        case Strategy::Always:
          rec = run_always(env, ex);
          break;
        case Strategy::Ideal:
          rec = run_ideal(env, ex);
          break;
        case Strategy::Adaptive:
          rec = run_adaptive(env, ex, estimator, *model, *ctx);
          break;
      }
    } catch (const ragate::Error& err) {
      if (err.kind() == ErrorKind::Config) throw;
      rec = RunRecord{};
      rec.example_id = ex.id;
      rec.strategy = strategy;
      rec.error = err.what();
    }
    std::cout << nlohmann::json(rec).dump() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-gated adaptive retrieval workbench"};
  app.require_subcommand(1);

  const std::vector<std::string> stages = {"generate", "score", "fit",        "run",
                                           "eval",     "ood",   "complexity", "report"};

  struct StageArgs {
    std::string config;
    std::vector<std::string> overrides;
  };
  std::map<std::string, StageArgs> args;
  std::string adhoc_dataset, adhoc_strategy, adhoc_estimator, adhoc_decider;

  for (const auto& stage : stages) {
    CLI::App* sub = app.add_subcommand(stage, "run the " + stage + " stage");
    sub->add_option("--config", args[stage].config, "experiment config JSON")->required();
    sub->add_option("--override", args[stage].overrides, "config override key=value");
    if (stage == "run") {
      sub->add_option("--dataset", adhoc_dataset, "QA JSONL for an ad-hoc run");
      sub->add_option("--strategy", adhoc_strategy, "never|always|adaptive|ideal")
          ->check(CLI::IsMember({"never", "always", "adaptive", "ideal"}));
      sub->add_option("--estimator", adhoc_estimator, "estimator id (adaptive runs)");
      sub->add_option("--decider", adhoc_decider, "fitted decider model file");
    }
  }

  std::string index_corpus, index_out;
  CLI::App* index_cmd = app.add_subcommand("index", "build and save a BM25 index");
  index_cmd->add_option("--corpus", index_corpus, "document JSONL")->required();
  index_cmd->add_option("--out", index_out, "index output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (index_cmd->parsed()) {
      auto corpus = ragate::read_jsonl<ragate::Document>(index_corpus);
      ragate::Bm25Index::build(std::move(corpus)).save(index_out);
      return 0;
    }
    for (const auto& stage : stages) {
      if (!app.get_subcommand(stage)->parsed()) continue;
      ragate::ExperimentConfig cfg = ragate::load_config(args[stage].config,
                                                         args[stage].overrides);
      ragate::Experiment exp(std::move(cfg));
      if (stage == "run" && !adhoc_strategy.empty()) {
        run_adhoc(exp, adhoc_dataset, adhoc_strategy, adhoc_estimator, adhoc_decider);
      } else {
        exp.run_stage(stage);
      }
      return 0;
    }
  } catch (const ragate::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code_for(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
