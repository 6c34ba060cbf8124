#pragma once

// Cross-dataset and complexity analysis: OOD transfer cells, the Friedman
// test with tie correction, Nemenyi post-hoc brackets from embedded critical
// tables (k <= 10), fit-based empirical Rademacher estimates, loss-landscape
// sharpness for the logistic decider, hybrid feature importance and the
// classifier-sensitivity drop table.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ragate/core.hpp"
#include "ragate/deciders.hpp"

namespace ragate {

// ---------------------------------------------------------------------------
// OOD transfer

struct TransferCell {
  std::string train_dataset;
  std::string test_dataset;
  double in_domain = 0.0;     // test dataset's own-train performance
  double transferred = 0.0;   // performance of the transferred decider
  std::optional<double> change_pct;  // null when in-domain is 0
};

/// values(i, j) = metric when training on dataset i and testing on dataset j.
/// change = 100 * (transferred - in_domain) / in_domain; diagonal cells are 0.
std::vector<TransferCell> ood_matrix(const std::vector<std::string>& datasets,
                                     const Eigen::MatrixXd& values);

// ---------------------------------------------------------------------------
// Rank statistics

struct FriedmanResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int n = 0;
  int k = 0;
  bool all_tied = false;
  std::vector<double> rank_means;  // column mean ranks, ties averaged
};

/// Rows are datasets, columns are methods. All-tied input gives (0, 1).
FriedmanResult friedman(const Eigen::MatrixXd& values);

struct NemenyiResult {
  Eigen::MatrixXd q;  // pairwise |rank mean difference| / critical denominator
  std::vector<std::vector<std::string>> p_bracket;  // "1.00", "<0.01", ">=0.10", ...
};

/// Brackets come from embedded critical tables (alpha 0.10/0.05/0.01, k <= 10).
NemenyiResult nemenyi(const std::vector<double>& rank_means, int n);

// ---------------------------------------------------------------------------
// Complexity

enum class RademacherClass { Constant, Threshold, Logreg, Tree, Knn, Mlp };

struct RademacherResult {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double baseline = 0.0;    // constant-classifier estimate on the same draws
  double normalized = 0.0;  // estimate / baseline
  int n = 0;
  int draws = 0;
  bool low_draws = false;  // draws < 10
};

/// Empirical fit-based estimate: for each sigma draw the decider is fit to
/// pseudo-labels (sigma+1)/2 and correlated back against sigma. An optimistic
/// lower bound on the true supremum.
RademacherResult rademacher_estimate(const Eigen::MatrixXd& features, RademacherClass cls,
                                     int draws, std::uint64_t seed);

struct SharpnessResult {
  double lambda_max = 0.0;
  double log10_lambda_max = 0.0;
  int n = 0;
};

/// Largest Hessian eigenvalue of the ridge logistic loss at the fitted
/// optimum, weights block only, by power iteration (relative tol 1e-8).
SharpnessResult sharpness(const DeciderModel& model, const DecisionTable& table);

/// Core routine on explicit inputs: H = (1/n) X^T S X + lambda I.
double sharpness_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, double bias,
                            double lambda);

// ---------------------------------------------------------------------------
// Feature importance and classifier sensitivity

struct FeatureImportance {
  std::vector<std::pair<std::string, double>> ranked;  // descending importance
  bool degenerate = false;                             // all-zero importances
  std::vector<std::pair<std::string, std::string>> collinear;  // |corr| > 0.99
};

/// |coefficient| for the logistic decider; total Gini decrease replayed over
/// `table` for the tree decider; other kinds are unsupported.
FeatureImportance hybrid_feature_importance(const DeciderModel& model,
                                            const DecisionTable& table);

struct SensitivityRow {
  std::string method;
  double drop = 0.0;       // mean over datasets of (max - mean) over classifiers
  double mean_rank = 0.0;  // rank by mean-over-classifiers performance
  double max_rank = 0.0;   // rank by max-over-classifiers performance
  double rank_difference = 0.0;
};

/// values[method][dataset][classifier] holds In-Accuracy.
std::vector<SensitivityRow> classifier_sensitivity(
    const std::vector<std::string>& methods,
    const std::vector<std::vector<std::vector<double>>>& values);

}  // namespace ragate
