#pragma once

// The metric kit: QA correctness (In-Accuracy, EM, token F1 over SQuAD-style
// normalization), efficiency means (LMC, RC), self-knowledge diagnostics
// (accuracy, ROC-AUC, Spearman, over/underconfidence), cross-dataset rank
// aggregation and the metric-correlation table. Undefined values are null,
// never zero, so rank aggregation can skip them instead of distorting.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ragate/core.hpp"

namespace ragate {

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse spaces.
std::string normalize_answer(const std::string& text);

std::vector<std::string> answer_tokens(const std::string& text);

/// 1 iff any normalized gold appears as a substring of the normalized pred.
int in_accuracy(const std::string& pred, const std::vector<std::string>& golds);

/// 1 iff the normalized pred equals any normalized gold.
int exact_match(const std::string& pred, const std::vector<std::string>& golds);

/// Max over golds of the token-multiset F1; both-empty compares as 1.
double f1(const std::string& pred, const std::vector<std::string>& golds);

struct Efficiency {
  double lmc = 0.0;
  double rc = 0.0;
};

Efficiency efficiency(const std::vector<RunRecord>& records);  // empty -> error

/// Rank-based AUC; ties contribute 1/2. Null with a reason when only one
/// class is present.
std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                              std::string* reason = nullptr);

/// Pearson correlation of tie-averaged ranks; null when either side has zero
/// variance.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct OverUnder {
  double over = 0.0;
  double under = 0.0;
  bool over_defined = true;   // false when no skip decisions exist
  bool under_defined = true;  // false when no retrieve decisions exist
};

/// over: fraction of skip decisions that were wrong; under: fraction of
/// retrieve decisions that were unnecessary. Empty denominators yield 0 with
/// the matching defined-flag cleared.
OverUnder over_under_confidence(const std::vector<int>& y_hat, const std::vector<int>& y);

// ---------------------------------------------------------------------------
// Aggregation

/// Smaller rank = better. Ties share the averaged rank.
std::vector<double> competition_ranks(const std::vector<double>& values, bool higher_better);

struct RankTable {
  std::vector<std::string> methods;
  // ranks[dataset][method]; null where the method had no value on the dataset
  std::vector<std::vector<std::optional<double>>> ranks;
  std::vector<std::optional<double>> average;  // across datasets with values
};

RankTable rank_table(const std::vector<std::map<std::string, std::optional<double>>>& per_dataset,
                     const std::vector<std::string>& methods, bool higher_better);

struct MetricCorrelation {
  std::vector<std::string> metrics;
  std::vector<std::vector<std::optional<double>>> rho;  // unit diagonal
};

/// Spearman correlation between metric columns after z-scoring each metric
/// within each dataset. values[dataset][method][metric] may be null.
MetricCorrelation metric_correlation(
    const std::vector<std::string>& metric_names,
    const std::vector<std::vector<std::vector<std::optional<double>>>>& values);

// ---------------------------------------------------------------------------
// Reports

/// True for metrics where larger is better (InAcc, EM, F1, Accuracy, AUC,
/// Spearman); false for costs (LMC, RC, Over, Under).
bool metric_higher_better(const std::string& metric);

struct MetricsReport {
  std::vector<std::string> datasets;
  std::vector<std::string> methods;  // presentation order; strategies first
  std::vector<std::string> metrics;
  // values[dataset][method][metric]
  std::vector<std::map<std::string, std::map<std::string, std::optional<double>>>> values;
  std::vector<std::string> ue_methods;  // subset feeding the Best UE row
};

std::string report_csv(const MetricsReport& report);
std::string report_markdown(const MetricsReport& report);

}  // namespace ragate
