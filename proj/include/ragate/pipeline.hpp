#pragma once

// The four answering strategies (never / always / adaptive / ideal) with
// protocol call accounting, plus score-row construction for decider training.
//
// Billing rules (RunRecord level, distinct from the gateway's backend meter):
//   never:    lm = 1, rc = 0        always: lm = 1, rc = 1
//   adaptive: lm = 1 + yhat (+1 when PMI-family force-scoring ran), rc = yhat
//   ideal:    lm = 1 + y, rc = y
// Batched sampling for consistency estimators rides along with the initial
// answer and is not billed separately.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ragate/core.hpp"
#include "ragate/deciders.hpp"
#include "ragate/estimators.hpp"
#include "ragate/llm.hpp"
#include "ragate/retrieval.hpp"

namespace ragate {

struct EstimatorParams {
  double tau = 2.0;            // cpmi entropy gate
  double beta = 1.0;           // cpmi unconditional weight
  double alpha = 2.0;          // renyi order
  double cluster_theta = 0.5;  // similarity threshold for semantic clustering
  double t_temp = 1.0;         // sentence-sar boost temperature
  double shrinkage = 0.1;      // density covariance shrinkage
  int rde_q = 100;             // pca components, clamped to the feature dim
};

/// Fitted context the trainable estimators need at scoring time.
struct ScoreContext {
  SimilarityFn sim;
  EstimatorParams params;
  std::optional<DensityStats> task_density;
  std::optional<DensityStats> background_density;
  std::optional<RdeModel> rde_model;
  std::optional<FeatureStats> hybrid_stats;
};

/// Everything one estimator evaluation may consume for a single example.
struct ExampleInputs {
  GenerationTrace main_trace;
  std::optional<SampleSet> samples;
  std::optional<GenerationTrace> uncond;
  std::optional<double> p_true;
  std::optional<Eigen::VectorXd> features;
};

/// Scalar estimators only; "hybrid" is assembled from other scores upstream.
double compute_estimator(const std::string& method, const ExampleInputs& inputs,
                         const ScoreContext& ctx);

// ---------------------------------------------------------------------------
// Prompts

/// Few-shot block, optional Context section, then "Question: ...\nAnswer:".
std::string make_prompt(const std::string& few_shot, const std::string& question,
                        const std::string& context);

/// Prompt used to force-score answer tokens without the question (PMI family).
std::string uncond_prompt(const std::string& few_shot);

struct PipelineEnv {
  LlmGateway* gateway = nullptr;
  Retriever* retriever = nullptr;
  DecodeConfig decode;         // greedy answer decoding
  DecodeConfig sample_decode;  // temperature sampling for consistency methods
  std::string few_shot;
  int context_k = 3;
};

/// Joins the bodies of the top-k hits; empty when nothing was retrieved.
std::string render_context(PipelineEnv& env, const std::vector<SearchHit>& hits);

// ---------------------------------------------------------------------------
// Strategies

RunRecord run_never(PipelineEnv& env, const QAExample& ex);
RunRecord run_always(PipelineEnv& env, const QAExample& ex);
RunRecord run_ideal(PipelineEnv& env, const QAExample& ex);

/// Gated run. `features` feeds density estimators and may stay empty for the
/// logit and consistency families. Throws before any LM call when the decider
/// manifest does not match the estimator.
RunRecord run_adaptive(PipelineEnv& env, const QAExample& ex, const std::string& method,
                       const DeciderModel& model, const ScoreContext& ctx,
                       const std::optional<Eigen::VectorXd>& features = std::nullopt);

// ---------------------------------------------------------------------------
// Score rows (decision-table construction)

struct ScoreRow {
  std::string example_id;
  std::string no_rag_answer;
  std::string rag_answer;
  int correct_norag = 0;
  int correct_rag = 0;
  int y = 0;  // 1 - correct_norag
  std::map<std::string, double> scores;
  std::string error;  // row degraded; other fields untrustworthy
};

void to_json(nlohmann::json& j, const ScoreRow& v);
void from_json(const nlohmann::json& j, ScoreRow& v);

/// Computes answers, correctness flags and every requested scalar estimator
/// for each example. Per-row failures are recorded and the run continues.
std::vector<ScoreRow> build_score_rows(PipelineEnv& env, const std::vector<QAExample>& dataset,
                                       const std::vector<std::string>& methods,
                                       const ScoreContext& ctx,
                                       const std::map<std::string, Eigen::VectorXd>& features);

DecisionTable table_from_scores(const std::vector<ScoreRow>& rows, const std::string& method);
DecisionTable table_from_hybrid(const std::vector<ScoreRow>& rows, const FeatureStats& stats);

}  // namespace ragate
