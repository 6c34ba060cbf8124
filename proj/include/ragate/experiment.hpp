#pragma once

// File-staged experiment orchestration behind the CLI:
//
//   generate -> score -> fit -> run -> eval -> ood -> complexity -> report
//
// Each stage reads the config plus prior-stage artifacts under output_dir and
// writes its own files; nothing mutates another stage's outputs. Rerunning a
// stage with unchanged inputs is byte-identical (sorted JSON keys, fixed
// float formatting, no timestamps). A missing upstream artifact raises
// Error(MissingArtifact) naming the stage to run.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragate/core.hpp"
#include "ragate/deciders.hpp"
#include "ragate/estimators.hpp"
#include "ragate/llm.hpp"
#include "ragate/pipeline.hpp"
#include "ragate/retrieval.hpp"

namespace ragate {

struct DatasetSpec {
  std::string name;
  std::string train;  // JSONL of QAExample; paths resolve against the config dir
  std::string test;
  std::string train_features;  // optional hidden-feature JSONL
  std::string test_features;
};

struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  std::string corpus;              // JSONL corpus; also the docstore for remote search
  std::string retriever_endpoint;  // empty -> embedded BM25 index
  std::string mock_llm;            // mock spec path; empty -> HTTP backend from env
  std::vector<std::string> estimators;
  std::vector<std::string> hybrid_manifest;  // feature order when "hybrid" is run
  std::vector<std::string> deciders = {"threshold"};
  std::string selection_mode = "holdout";  // or "paper_faithful_test"
  std::string threshold_mode = "log_grid_200";  // or "midpoints"
  int n_samples = 5;
  double sample_temperature = 1.0;
  int context_k = 3;
  int top_k_logprobs = 20;
  int max_tokens = 32;
  std::uint64_t seed = 1234;
  std::string output_dir = "out";
  std::string cache_dir;  // empty -> $RAGATE_CACHE_DIR, else output_dir/cache
  std::string few_shot_file;  // empty -> built-in two-example block
  std::string similarity_kind = "lexical";  // or "external"
  std::string similarity_endpoint;
  std::string background_features;  // enables rmd
  EstimatorParams estimator_params;
  int rademacher_draws = 50;
  std::vector<std::string> rademacher_classes = {"threshold", "tree"};

  std::string base_dir;  // directory of the config file; set by load_config

  void validate() const;  // throws Error(Config); checks referenced files exist
  std::string resolve(const std::string& path) const;
  std::string out_path(const std::string& name) const;

  /// Estimator ids scored per example: configured scalars plus every hybrid
  /// manifest entry; "hybrid" itself is assembled, not scored.
  std::vector<std::string> scored_methods() const;
  bool runs_hybrid() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& v);
void from_json(const nlohmann::json& j, ExperimentConfig& v);

/// Parses the JSON file, applies `key=value` overrides (dot paths, values
/// parsed as JSON when possible), resolves base_dir, validates.
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides);

/// In-place override on the raw config JSON: "a.b.0.c=value".
void apply_override(nlohmann::json& j, const std::string& assignment);

class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);
  ~Experiment();

  void cmd_generate();
  void cmd_score();
  void cmd_fit();
  void cmd_run();
  void cmd_eval();
  void cmd_ood();
  void cmd_complexity();
  void cmd_report();

  /// Runs one stage by name; unknown stage -> Error(Config).
  void run_stage(const std::string& stage);

  const ExperimentConfig& config() const { return config_; }

  LlmGateway& gateway();
  Retriever& retriever();
  PipelineEnv env();

  /// Similarity/params plus density fits for `dataset` (aux = first half of
  /// the train feature rows, background from the configured file). With
  /// `with_hybrid_stats` the fit-stage stats artifact is loaded as well.
  ScoreContext score_context(const DatasetSpec& dataset, bool with_hybrid_stats);

 private:
  void require_artifact(const std::string& path, const std::string& producer_stage) const;
  std::map<std::string, Eigen::VectorXd> load_features(const std::string& path) const;
  std::vector<ScoreRow> load_scores(const std::string& dataset, const std::string& split) const;
  /// Table over every non-degraded row; hybrid rows assemble through `stats`.
  DecisionTable build_table(const std::string& method, const std::vector<ScoreRow>& rows,
                            const std::optional<FeatureStats>& stats) const;
  /// Classifier rows: the second half of train for trainable methods
  /// (density family, hybrid), the whole train split otherwise.
  DecisionTable classifier_slice(const std::string& method,
                                 const std::vector<ScoreRow>& train_rows,
                                 const std::optional<FeatureStats>& stats) const;
  /// Seeded shuffle, 20% (at least one row) reserved for selection.
  std::pair<DecisionTable, DecisionTable> holdout_split(const DecisionTable& table,
                                                        std::uint64_t seed) const;
  FeatureStats load_hybrid_stats(const std::string& dataset) const;
  DeciderModel load_selected_model(const std::string& dataset, const std::string& method) const;
  std::uint64_t derived_seed(const std::string& tag) const;
  ThresholdMode threshold_mode_enum() const;
  SelectionMode selection_mode_enum() const;

  ExperimentConfig config_;
  std::unique_ptr<LlmGateway> gateway_;
  std::unique_ptr<Retriever> retriever_;
  std::string few_shot_;
  bool few_shot_loaded_ = false;
};

}  // namespace ragate
