#pragma once

// The uncertainty-score catalog. Every estimator is a pure function of traces,
// sample sets or feature vectors and returns a value oriented so that higher
// always means more uncertain. Families:
//
//   * logit-based      — entropies, perplexity, sequence probabilities, PMI,
//                        Renyi / Fisher-Rao divergence from uniform, SAR,
//                        P(True) probes;
//   * consistency      — pairwise-similarity statistics over sampled answers,
//                        including the normalized-Laplacian spectrum family;
//   * internal-state   — Gaussian density scores over hidden features
//                        (Mahalanobis, relative Mahalanobis, reduced-space);
//   * blended          — the z-scored hybrid feature vector.
//
// Probabilities are floored at kProbFloor before any log. Laplacian
// construction: the similarity matrix's diagonal is dropped, degrees come
// from the remaining weights, and isolated rows keep L_ii = 0, so eigenvalues
// stay in [0, 2] and each connected clique contributes one zero eigenvalue.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ragate/core.hpp"

namespace ragate {

// ---------------------------------------------------------------------------
// Similarity

struct SimilarityFn {
  enum class Kind { LexicalTokenF1, ExternalScorer };
  Kind kind = Kind::LexicalTokenF1;
  std::string endpoint;  // used when kind == ExternalScorer; POST /sim {"a","b"}
  int max_attempts = 3;
  int retry_delay_ms = 50;

  double operator()(const std::string& a, const std::string& b) const;
};

/// M_ij = sim(text_i, text_j) with the diagonal pinned to exactly 1.
Eigen::MatrixXd similarity_matrix(const std::vector<std::string>& texts,
                                  const SimilarityFn& sim);

// ---------------------------------------------------------------------------
// Logit-based estimators

enum class Aggregate { Max, Mean, Min, Median };

/// Per-token entropy over the alternative list plus the tail bucket.
std::vector<double> token_entropies(const GenerationTrace& trace);

double entropy_aggregate(const GenerationTrace& trace, Aggregate agg);
double perplexity(const GenerationTrace& trace);

/// -ln(agg_j exp(total_logprob_j)) over a sample set, floored.
double sequence_prob_aggregate(const SampleSet& samples, Aggregate agg);

/// Mean pointwise mutual information between the conditional and the
/// unconditional scoring of the same tokens, negated.
double pmi_mean(const GenerationTrace& cond, const GenerationTrace& uncond);

/// Conditional PMI: the unconditional term only fires on high-entropy tokens.
double cpmi_mean(const GenerationTrace& cond, const GenerationTrace& uncond,
                 double tau = 2.0, double beta = 1.0);

/// Negated mean alpha-Renyi divergence from uniform; alpha = 1 is an error.
double renyi_negentropy(const GenerationTrace& trace, double alpha = 2.0);

/// 1 - mean Fisher-Rao distance from uniform, both in [0,1].
double fisher_rao_score(const GenerationTrace& trace);

/// Relevance-weighted NLL sum; token relevance R_t = 1 - sim(text, text \ t).
double sar_score(const GenerationTrace& trace, const SimilarityFn& sim);

/// Sentence-level SAR over a sample set with relevance-boosted probabilities.
double sentence_sar_score(const SampleSet& samples, const SimilarityFn& sim,
                          double t_temp = 1.0);

/// 1 - P(True) from a judgment probe.
double ptrue_score(double p_true);

// ---------------------------------------------------------------------------
// Consistency-based estimators

double lexical_similarity_score(const Eigen::MatrixXd& matrix);

/// Connected components of the graph with edges M_ij >= theta.
int num_sem_sets(const Eigen::MatrixXd& matrix, double theta = 0.5);
std::vector<int> component_labels(const Eigen::MatrixXd& matrix, double theta);

/// Mean pairwise dissimilarity including the zero diagonal terms.
double deg_mat_score(const Eigen::MatrixXd& matrix);

struct LaplacianEigen {
  Eigen::VectorXd values;   // ascending, clamped to [0, 2]
  Eigen::MatrixXd vectors;  // columns aligned with values
};

LaplacianEigen laplacian_eigen(const Eigen::MatrixXd& matrix);
Eigen::VectorXd laplacian_spectrum(const Eigen::MatrixXd& matrix);

/// Sum of max(0, 1 - lambda); counts clusters on clique-structured matrices.
double eig_val_laplacian_score(const Eigen::VectorXd& spectrum);

/// Frobenius norm of centered spectral embeddings. Informative eigenvectors
/// are those with lambda < 0.9 (cluster indicators), capped at k.
double eccentricity_score(const LaplacianEigen& eigen, int k = 2);

/// Entropy of cluster probability masses at clustering threshold theta.
double semantic_entropy(const SampleSet& samples, const Eigen::MatrixXd& matrix,
                        double theta = 0.5);

// ---------------------------------------------------------------------------
// Internal-state (density) estimators

struct DensityStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // after shrinkage
  Eigen::LDLT<Eigen::MatrixXd> solver;
  double shrinkage = 0.1;
};

/// Fits mean and shrunk covariance: (1-l)*S + l*diag(max(S_ii, 1e-9)).
DensityStats fit_density(const Eigen::MatrixXd& rows, double shrinkage = 0.1);

double mahalanobis(const DensityStats& stats, const Eigen::VectorXd& x);
double relative_mahalanobis(const DensityStats& task, const DensityStats& background,
                            const Eigen::VectorXd& x);

struct RdeModel {
  Eigen::VectorXd mean;        // train mean in the original space
  Eigen::MatrixXd projection;  // d x q, orthonormal columns
  DensityStats reduced;
};

RdeModel fit_rde(const Eigen::MatrixXd& rows, int q, double shrinkage = 0.1);
double rde_score(const RdeModel& model, const Eigen::VectorXd& x);

/// One-shot fit + score, top-q principal subspace.
double rde(const Eigen::MatrixXd& rows, const Eigen::VectorXd& x, int q,
           double shrinkage = 0.1);

// ---------------------------------------------------------------------------
// Hybrid feature assembly

struct FeatureStats {
  std::vector<std::string> manifest;  // fixed feature order
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // floored at 1e-9 when applied
};

struct HybridFeatureRow {
  std::string example_id;
  Eigen::VectorXd values;      // z-scored, imputed entries are 0
  std::vector<bool> imputed;   // true where the method score was missing
};

/// Per-method mean/std over the training rows (population std).
FeatureStats fit_feature_stats(const std::vector<std::string>& manifest,
                               const std::vector<std::map<std::string, double>>& train_rows);

HybridFeatureRow assemble_hybrid(const std::string& example_id,
                                 const std::map<std::string, double>& scores,
                                 const FeatureStats& stats);

// ---------------------------------------------------------------------------
// Catalog

enum class EstimatorFamily { Logit, Consistency, Density, Blended };

struct EstimatorInfo {
  std::string id;
  EstimatorFamily family;
  bool needs_samples = false;   // consistency methods and sample aggregates
  bool needs_uncond = false;    // PMI family: one extra force-scoring call
  bool needs_probe = false;     // P(True)
  bool needs_features = false;  // density family
};

const std::vector<EstimatorInfo>& estimator_catalog();
const EstimatorInfo& estimator_info(const std::string& id);  // throws on unknown id
bool is_known_estimator(const std::string& id);

}  // namespace ragate
