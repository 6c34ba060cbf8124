#pragma once

// Retrieve/skip classifiers over uncertainty scores (scalar) or hybrid
// feature vectors. Five kinds: threshold grid, ridge logistic regression,
// depth-3 Gini tree, 15-NN and a 2x64 MLP. Every fit is deterministic; each
// model serializes to a JSON envelope {kind, params, manifest_hash, mode}.
//
// The training objective everywhere is simulated In-Accuracy: a row counts
// correct_rag when the model says retrieve, correct_norag when it says skip.
// Prediction ties resolve toward 1 (retrieve: the safer action).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ragate/core.hpp"

namespace ragate {

struct DecisionRow {
  std::string example_id;
  Eigen::VectorXd features;  // size 1 for scalar-score methods
  int y = 0;                 // 1 iff retrieval needed (no-RAG answer was wrong)
  int correct_norag = 0;
  int correct_rag = 0;
};

struct DecisionTable {
  std::vector<std::string> feature_names;
  std::vector<DecisionRow> rows;

  void validate() const;  // y = 1 - correct_norag; constant feature dimension
  Eigen::MatrixXd feature_matrix() const;
  std::vector<int> labels() const;
  std::string manifest_hash() const;  // sha256 over the feature-name manifest
};

void to_json(nlohmann::json& j, const DecisionRow& v);
void from_json(const nlohmann::json& j, DecisionRow& v);
void to_json(nlohmann::json& j, const DecisionTable& v);
void from_json(const nlohmann::json& j, DecisionTable& v);

// ---------------------------------------------------------------------------
// Models

enum class DeciderKind { Threshold, Logreg, Tree, Knn, Mlp };

std::string decider_kind_name(DeciderKind k);
DeciderKind decider_kind_from_name(const std::string& name);

enum class ThresholdMode { LogGrid200, Midpoints };

struct ThresholdParams {
  double theta = 0.0;
  std::string direction = "greater";  // retrieve when score > theta
  bool degenerate = false;            // constant training scores
  int majority = 0;                   // constant prediction when degenerate
};

struct TreeNode {
  int feature = -1;        // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  int label = -1;  // leaf prediction
};

struct DeciderModel {
  DeciderKind kind = DeciderKind::Threshold;
  std::string manifest_hash;
  std::string mode;  // fitting/selection mode tag, e.g. "log_grid_200"

  // z-scoring owned by the kinds that require it (logreg, knn, mlp)
  Eigen::VectorXd scale_mean;
  Eigen::VectorXd scale_std;

  ThresholdParams threshold;

  Eigen::VectorXd weights;  // logreg
  double bias = 0.0;
  std::vector<double> loss_trajectory;  // logreg diagnostics, not serialized
  bool converged = true;

  std::vector<TreeNode> tree;  // root at index 0

  Eigen::MatrixXd knn_x;  // z-scored training features
  std::vector<int> knn_y;
  int knn_k = 0;

  Eigen::MatrixXd mlp_w1;  // 64 x d
  Eigen::VectorXd mlp_b1;
  Eigen::MatrixXd mlp_w2;  // 64 x 64
  Eigen::VectorXd mlp_b2;
  Eigen::VectorXd mlp_w3;  // 64
  double mlp_b3 = 0.0;

  int predict(const Eigen::VectorXd& x) const;
  /// Raw decision value behind predict: score - theta, probability, or vote share.
  double decision_value(const Eigen::VectorXd& x) const;

  nlohmann::json to_json() const;
  static DeciderModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static DeciderModel load(const std::string& path);
};

// ---------------------------------------------------------------------------
// Fitting

DeciderModel fit_threshold(const DecisionTable& table, ThresholdMode mode);
DeciderModel fit_logreg(const DecisionTable& table);
DeciderModel fit_tree(const DecisionTable& table);
DeciderModel fit_knn(const DecisionTable& table);
DeciderModel fit_mlp(const DecisionTable& table, std::uint64_t seed);

/// Dispatch by kind; threshold uses midpoints unless mode says otherwise.
DeciderModel fit_decider(DeciderKind kind, const DecisionTable& table, std::uint64_t seed,
                         ThresholdMode threshold_mode = ThresholdMode::LogGrid200);

std::vector<int> predict_all(const DeciderModel& model, const DecisionTable& table);

/// Mean of (predict ? correct_rag : correct_norag) over the table.
double simulated_in_accuracy(const DeciderModel& model, const DecisionTable& table);
double retrieval_rate(const DeciderModel& model, const DecisionTable& table);

// ---------------------------------------------------------------------------
// Selection

enum class SelectionMode { PaperFaithfulTest, Holdout };

std::string selection_mode_name(SelectionMode m);
SelectionMode selection_mode_from_name(const std::string& name);

struct SelectionEntry {
  std::string kind;
  double in_accuracy = 0.0;
  double retrieval_rate = 0.0;
};

struct SelectionReport {
  std::string mode;
  std::string note;  // leakage disclosure for the paper-faithful mode
  std::vector<SelectionEntry> entries;
  std::string chosen;
  double best = 0.0;
  double mean = 0.0;
  double drop = 0.0;  // best - mean, the classifier-sensitivity headline
};

void to_json(nlohmann::json& j, const SelectionReport& v);
void from_json(const nlohmann::json& j, SelectionReport& v);

/// Picks argmax simulated In-Accuracy on `eval`; ties keep the earlier model.
/// The caller supplies `eval` per mode: the test split (paper-faithful,
/// leakage disclosed) or a reserved slice of train (holdout).
std::pair<DeciderModel, SelectionReport> select_best(const std::vector<DeciderModel>& models,
                                                     const DecisionTable& eval,
                                                     SelectionMode mode);

}  // namespace ragate
