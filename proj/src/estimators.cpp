#include "ragate/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ragate/numeric.hpp"
#include "ragate/text.hpp"

namespace ragate {
namespace {

double floored(double p) { return std::max(p, kProbFloor); }

double aggregate_of(std::vector<double> v, Aggregate agg) {
  if (v.empty()) throw Error(ErrorKind::Data, "aggregate over empty vector");
  switch (agg) {
    case Aggregate::Max:
      return *std::max_element(v.begin(), v.end());
    case Aggregate::Min:
      return *std::min_element(v.begin(), v.end());
    case Aggregate::Mean: {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    }
    case Aggregate::Median: {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      if (n % 2 == 1) return v[n / 2];
      return 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
  }
  throw Error(ErrorKind::Config, "unknown aggregate");
}

// Effective support size: listed alternatives plus one tail bucket when the
// tail carries mass. Keeps uniform-reference scores stable when an API
// reports a truncated distribution.
int effective_support(const TokenStep& step) {
  int k = static_cast<int>(step.alternatives.size());
  if (step.tail_mass > kProbFloor) ++k;
  return k;
}

std::string concat_without(const GenerationTrace& trace, std::size_t skip) {
  std::string out;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    if (t == skip) continue;
    out += trace.steps[t].token;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Similarity

double SimilarityFn::operator()(const std::string& a, const std::string& b) const {
  if (kind == Kind::LexicalTokenF1) return lexical_token_f1(a, b);

  auto [host, prefix] = [&] {
    auto pos = endpoint.find("://");
    std::string rest = pos == std::string::npos ? endpoint : endpoint.substr(pos + 3);
    auto slash = rest.find('/');
    std::string h = slash == std::string::npos ? rest : rest.substr(0, slash);
    std::string p = slash == std::string::npos ? std::string() : rest.substr(slash);
    bool https = endpoint.rfind("https://", 0) == 0;
    return std::pair<std::string, std::string>((https ? "https://" : "http://") + h, p);
  }();

  nlohmann::json body{{"a", a}, {"b", b}};
  std::string payload = body.dump();
  std::string last_error = "no attempt made";
  for (int attempt = 1; attempt <= std::max(1, max_attempts); ++attempt) {
    httplib::Client client(host);
    client.set_read_timeout(30, 0);
    auto res = client.Post(prefix + "/sim", payload, "application/json");
    if (res && res->status == 200) {
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded() || !parsed.contains("score")) {
        throw Error(ErrorKind::Transport, "similarity scorer returned malformed body");
      }
      double s = parsed.at("score").get<double>();
      return std::clamp(s, 0.0, 1.0);
    }
    last_error = res ? "status " + std::to_string(res->status)
                     : "transport: " + httplib::to_string(res.error());
    if (attempt < max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(retry_delay_ms * attempt));
    }
  }
  throw Error(ErrorKind::Transport, "similarity scorer unreachable: " + last_error);
}

Eigen::MatrixXd similarity_matrix(const std::vector<std::string>& texts,
                                  const SimilarityFn& sim) {
  const Eigen::Index n = static_cast<Eigen::Index>(texts.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double s = sim(texts[static_cast<std::size_t>(i)], texts[static_cast<std::size_t>(j)]);
      m(i, j) = s;
      m(j, i) = s;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Logit-based estimators

std::vector<double> token_entropies(const GenerationTrace& trace) {
  if (trace.steps.empty()) throw Error(ErrorKind::Data, "empty generation");
  std::vector<double> out;
  out.reserve(trace.steps.size());
  for (const auto& step : trace.steps) {
    double h = 0.0;
    for (const auto& alt : step.alternatives) {
      double p = floored(std::exp(alt.logprob));
      h -= p * std::log(p);
    }
    if (step.tail_mass > kProbFloor) h -= step.tail_mass * std::log(step.tail_mass);
    out.push_back(h);
  }
  return out;
}

double entropy_aggregate(const GenerationTrace& trace, Aggregate agg) {
  return aggregate_of(token_entropies(trace), agg);
}

double perplexity(const GenerationTrace& trace) {
  auto nll = trace_token_nll(trace);
  double mean = 0.0;
  for (double x : nll) mean += x;
  mean /= static_cast<double>(nll.size());
  return std::exp(mean);
}

double sequence_prob_aggregate(const SampleSet& samples, Aggregate agg) {
  if (samples.samples.empty()) throw Error(ErrorKind::Data, "empty sample set");
  std::vector<double> probs;
  probs.reserve(samples.samples.size());
  for (const auto& s : samples.samples) probs.push_back(std::exp(s.total_logprob));
  return -std::log(floored(aggregate_of(std::move(probs), agg)));
}

double pmi_mean(const GenerationTrace& cond, const GenerationTrace& uncond) {
  if (cond.steps.empty()) throw Error(ErrorKind::Data, "empty generation");
  if (cond.steps.size() != uncond.steps.size()) {
    throw Error(ErrorKind::Data, "conditional and unconditional traces differ in length");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < cond.steps.size(); ++t) {
    sum += cond.steps[t].logprob - uncond.steps[t].logprob;
  }
  return -sum / static_cast<double>(cond.steps.size());
}

double cpmi_mean(const GenerationTrace& cond, const GenerationTrace& uncond,
                 double tau, double beta) {
  if (cond.steps.empty()) throw Error(ErrorKind::Data, "empty generation");
  if (cond.steps.size() != uncond.steps.size()) {
    throw Error(ErrorKind::Data, "conditional and unconditional traces differ in length");
  }
  auto entropies = token_entropies(cond);
  double sum = 0.0;
  for (std::size_t t = 0; t < cond.steps.size(); ++t) {
    sum -= cond.steps[t].logprob;
    if (entropies[t] >= tau) sum += beta * uncond.steps[t].logprob;
  }
  return sum / static_cast<double>(cond.steps.size());
}

double renyi_negentropy(const GenerationTrace& trace, double alpha) {
  if (trace.steps.empty()) throw Error(ErrorKind::Data, "empty generation");
  if (alpha <= 0.0 || alpha == 1.0) {
    throw Error(ErrorKind::Config, "renyi alpha must be positive and != 1");
  }
  double mean_div = 0.0;
  for (const auto& step : trace.steps) {
    double s = 0.0;
    for (const auto& alt : step.alternatives) {
      s += std::pow(floored(std::exp(alt.logprob)), alpha);
    }
    if (step.tail_mass > kProbFloor) s += std::pow(step.tail_mass, alpha);
    const double v_eff = static_cast<double>(effective_support(step));
    double div = (std::log(floored(s)) + (alpha - 1.0) * std::log(v_eff)) / (alpha - 1.0);
    mean_div += div;
  }
  mean_div /= static_cast<double>(trace.steps.size());
  return -mean_div;
}

double fisher_rao_score(const GenerationTrace& trace) {
  if (trace.steps.empty()) throw Error(ErrorKind::Data, "empty generation");
  double mean_fr = 0.0;
  for (const auto& step : trace.steps) {
    const double v_eff = static_cast<double>(effective_support(step));
    double b = 0.0;
    for (const auto& alt : step.alternatives) {
      b += std::sqrt(floored(std::exp(alt.logprob)) / v_eff);
    }
    if (step.tail_mass > kProbFloor) b += std::sqrt(step.tail_mass / v_eff);
    b = std::clamp(b, 0.0, 1.0);
    mean_fr += (2.0 / std::numbers::pi) * std::acos(b);
  }
  mean_fr /= static_cast<double>(trace.steps.size());
  return 1.0 - mean_fr;
}

double sar_score(const GenerationTrace& trace, const SimilarityFn& sim) {
  auto nll = trace_token_nll(trace);
  if (nll.size() == 1) return nll[0];
  double sum = 0.0;
  for (std::size_t t = 0; t < nll.size(); ++t) {
    double relevance = 1.0 - sim(trace.text, concat_without(trace, t));
    sum += nll[t] * relevance;
  }
  return sum;
}

double sentence_sar_score(const SampleSet& samples, const SimilarityFn& sim,
                          double t_temp) {
  const std::size_t n = samples.samples.size();
  if (n == 0) throw Error(ErrorKind::Data, "empty sample set");
  if (t_temp <= 0.0) throw Error(ErrorKind::Config, "sentence-sar temperature must be positive");
  std::vector<double> probs(n);
  std::vector<std::string> texts(n);
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] = std::exp(samples.samples[j].total_logprob);
    texts[j] = samples.samples[j].text;
  }
  Eigen::MatrixXd m = similarity_matrix(texts, sim);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double boosted = probs[j];
    for (std::size_t k = 0; k < n; ++k) {
      if (k == j) continue;
      boosted += m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * probs[k] / t_temp;
    }
    total += -std::log(floored(boosted));
  }
  return total / static_cast<double>(n);
}

double ptrue_score(double p_true) {
  if (p_true < 0.0 || p_true > 1.0) {
    throw Error(ErrorKind::Data, "p(true) outside [0, 1]");
  }
  return 1.0 - p_true;
}

// ---------------------------------------------------------------------------
// Consistency-based estimators

double lexical_similarity_score(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  if (n < 2) throw Error(ErrorKind::Data, "similarity score needs >= 2 samples");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) sum += matrix(i, j);
    }
  }
  return 1.0 - sum / static_cast<double>(n * (n - 1));
}

std::vector<int> component_labels(const Eigen::MatrixXd& matrix, double theta) {
  const Eigen::Index n = matrix.rows();
  if (n < 1) throw Error(ErrorKind::Data, "empty similarity matrix");
  UnionFind uf(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (matrix(i, j) >= theta) uf.unite(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
  }
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::map<std::size_t, int> seen;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t root = uf.find(static_cast<std::size_t>(i));
    auto [it, inserted] = seen.emplace(root, static_cast<int>(seen.size()));
    labels[static_cast<std::size_t>(i)] = it->second;
  }
  return labels;
}

int num_sem_sets(const Eigen::MatrixXd& matrix, double theta) {
  auto labels = component_labels(matrix, theta);
  return 1 + *std::max_element(labels.begin(), labels.end());
}

double deg_mat_score(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  if (n < 2) throw Error(ErrorKind::Data, "similarity score needs >= 2 samples");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) sum += 1.0 - matrix(i, j);
  }
  return sum / static_cast<double>(n * n);
}

LaplacianEigen laplacian_eigen(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  if (n < 1 || matrix.cols() != n) throw Error(ErrorKind::Data, "similarity matrix must be square");

  // Drop self-similarity so degrees only count edges to other samples;
  // isolated rows keep L_ii = 0 and contribute a zero eigenvalue.
  Eigen::MatrixXd w = matrix.cwiseMax(0.0);
  w.diagonal().setZero();
  Eigen::VectorXd degree = w.rowwise().sum();

  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (degree(i) > 0.0) lap(i, i) = 1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || w(i, j) <= 0.0) continue;
      lap(i, j) = -w(i, j) / std::sqrt(degree(i) * degree(j));
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::Data, "laplacian eigendecomposition failed");
  }
  LaplacianEigen out;
  out.values = solver.eigenvalues();
  out.vectors = solver.eigenvectors();
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = std::clamp(out.values(i), 0.0, 2.0);
    if (std::abs(v) < 1e-12) v = 0.0;
    out.values(i) = v;
  }
  return out;
}

Eigen::VectorXd laplacian_spectrum(const Eigen::MatrixXd& matrix) {
  return laplacian_eigen(matrix).values;
}

double eig_val_laplacian_score(const Eigen::VectorXd& spectrum) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < spectrum.size(); ++i) sum += std::max(0.0, 1.0 - spectrum(i));
  return sum;
}

double eccentricity_score(const LaplacianEigen& eigen, int k) {
  const Eigen::Index n = eigen.values.size();
  if (n < 1) throw Error(ErrorKind::Data, "empty spectrum");
  Eigen::Index informative = 0;
  while (informative < n && eigen.values(informative) < 0.9) ++informative;
  Eigen::Index k_eff = std::max<Eigen::Index>(1, std::min<Eigen::Index>(k, informative));
  Eigen::MatrixXd embed = eigen.vectors.leftCols(k_eff);
  Eigen::RowVectorXd centroid = embed.colwise().mean();
  return (embed.rowwise() - centroid).norm();
}

double semantic_entropy(const SampleSet& samples, const Eigen::MatrixXd& matrix,
                        double theta) {
  const std::size_t n = samples.samples.size();
  if (n == 0) throw Error(ErrorKind::Data, "empty sample set");
  if (matrix.rows() != static_cast<Eigen::Index>(n)) {
    throw Error(ErrorKind::Data, "similarity matrix does not match sample count");
  }
  auto labels = component_labels(matrix, theta);
  int clusters = 1 + *std::max_element(labels.begin(), labels.end());
  std::vector<double> mass(static_cast<std::size_t>(clusters), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double p = std::exp(samples.samples[j].total_logprob);
    if (p < kProbFloor) p = 0.0;
    mass[static_cast<std::size_t>(labels[j])] += p;
    total += p;
  }
  if (total <= 0.0) throw Error(ErrorKind::Data, "degenerate probabilities: all sample masses zero");
  double h = 0.0;
  for (double m : mass) {
    if (m <= 0.0) continue;
    double q = m / total;
    h -= q * std::log(q);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Internal-state (density) estimators

DensityStats fit_density(const Eigen::MatrixXd& rows, double shrinkage) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 2) throw Error(ErrorKind::Data, "density fit needs >= 2 rows");
  if (d < 1) throw Error(ErrorKind::Data, "density fit needs >= 1 feature dimension");
  if (shrinkage < 0.0 || shrinkage > 1.0) {
    throw Error(ErrorKind::Config, "shrinkage must lie in [0, 1]");
  }
  DensityStats stats;
  stats.shrinkage = shrinkage;
  stats.mean = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - stats.mean.transpose();
  Eigen::MatrixXd sample = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::VectorXd floor_diag = sample.diagonal().cwiseMax(1e-9);
  stats.covariance = (1.0 - shrinkage) * sample;
  stats.covariance.diagonal() += shrinkage * floor_diag;
  stats.solver.compute(stats.covariance);
  if (stats.solver.info() != Eigen::Success) {
    throw Error(ErrorKind::Data, "covariance factorization failed");
  }
  return stats;
}

double mahalanobis(const DensityStats& stats, const Eigen::VectorXd& x) {
  if (x.size() != stats.mean.size()) {
    throw Error(ErrorKind::Data, "feature dimension mismatch in mahalanobis");
  }
  Eigen::VectorXd diff = x - stats.mean;
  double q = diff.dot(stats.solver.solve(diff));
  return std::sqrt(std::max(0.0, q));
}

double relative_mahalanobis(const DensityStats& task, const DensityStats& background,
                            const Eigen::VectorXd& x) {
  return mahalanobis(task, x) - mahalanobis(background, x);
}

RdeModel fit_rde(const Eigen::MatrixXd& rows, int q, double shrinkage) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 2) throw Error(ErrorKind::Data, "density fit needs >= 2 rows");
  if (q < 1) throw Error(ErrorKind::Config, "rde needs q >= 1");
  const Eigen::Index q_eff = std::min<Eigen::Index>(q, d);

  RdeModel model;
  model.mean = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - model.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::Data, "pca eigendecomposition failed");
  }
  // Eigenvalues come back ascending; keep the top-q directions in
  // descending-variance order.
  model.projection.resize(d, q_eff);
  for (Eigen::Index c = 0; c < q_eff; ++c) {
    model.projection.col(c) = solver.eigenvectors().col(d - 1 - c);
  }
  Eigen::MatrixXd reduced = centered * model.projection;
  model.reduced = fit_density(reduced, shrinkage);
  return model;
}

double rde_score(const RdeModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.mean.size()) {
    throw Error(ErrorKind::Data, "feature dimension mismatch in rde");
  }
  Eigen::VectorXd projected = model.projection.transpose() * (x - model.mean);
  return mahalanobis(model.reduced, projected);
}

double rde(const Eigen::MatrixXd& rows, const Eigen::VectorXd& x, int q, double shrinkage) {
  return rde_score(fit_rde(rows, q, shrinkage), x);
}

// ---------------------------------------------------------------------------
// Hybrid feature assembly

FeatureStats fit_feature_stats(const std::vector<std::string>& manifest,
                               const std::vector<std::map<std::string, double>>& train_rows) {
  if (manifest.empty()) throw Error(ErrorKind::Config, "empty hybrid manifest");
  FeatureStats stats;
  stats.manifest = manifest;
  stats.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(manifest.size()));
  stats.stddev = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(manifest.size()));
  for (std::size_t f = 0; f < manifest.size(); ++f) {
    if (!is_known_estimator(manifest[f])) {
      throw Error(ErrorKind::Config, "unknown method id in hybrid manifest: " + manifest[f]);
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& row : train_rows) {
      auto it = row.find(manifest[f]);
      if (it == row.end()) continue;
      sum += it->second;
      ++count;
    }
    double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    double var = 0.0;
    for (const auto& row : train_rows) {
      auto it = row.find(manifest[f]);
      if (it == row.end()) continue;
      var += (it->second - mean) * (it->second - mean);
    }
    var = count > 0 ? var / static_cast<double>(count) : 0.0;
    stats.mean(static_cast<Eigen::Index>(f)) = mean;
    stats.stddev(static_cast<Eigen::Index>(f)) = std::sqrt(var);
  }
  return stats;
}

HybridFeatureRow assemble_hybrid(const std::string& example_id,
                                 const std::map<std::string, double>& scores,
                                 const FeatureStats& stats) {
  HybridFeatureRow row;
  row.example_id = example_id;
  row.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(stats.manifest.size()));
  row.imputed.assign(stats.manifest.size(), false);
  for (std::size_t f = 0; f < stats.manifest.size(); ++f) {
    if (!is_known_estimator(stats.manifest[f])) {
      throw Error(ErrorKind::Config, "unknown method id in hybrid manifest: " + stats.manifest[f]);
    }
    auto it = scores.find(stats.manifest[f]);
    if (it == scores.end()) {
      row.imputed[f] = true;
      continue;
    }
    double sd = std::max(stats.stddev(static_cast<Eigen::Index>(f)), 1e-9);
    row.values(static_cast<Eigen::Index>(f)) =
        (it->second - stats.mean(static_cast<Eigen::Index>(f))) / sd;
  }
  return row;
}

// ---------------------------------------------------------------------------
// Catalog

const std::vector<EstimatorInfo>& estimator_catalog() {
  static const std::vector<EstimatorInfo> catalog = [] {
    std::vector<EstimatorInfo> c;
    auto logit = [&](std::string id, bool samples = false, bool uncond = false, bool probe = false) {
      c.push_back({std::move(id), EstimatorFamily::Logit, samples, uncond, probe, false});
    };
    auto consistency = [&](std::string id) {
      c.push_back({std::move(id), EstimatorFamily::Consistency, true, false, false, false});
    };
    auto density = [&](std::string id) {
      c.push_back({std::move(id), EstimatorFamily::Density, false, false, false, true});
    };
    logit("max_entropy");
    logit("mean_entropy");
    logit("min_entropy");
    logit("median_entropy");
    logit("perplexity");
    logit("max_seq_prob", true);
    logit("mean_seq_prob", true);
    logit("min_seq_prob", true);
    logit("median_seq_prob", true);
    logit("mean_pmi", false, true);
    logit("mean_cpmi", false, true);
    logit("renyi_neg");
    logit("fisher_rao");
    logit("sar");
    logit("sentence_sar", true);
    logit("ptrue", false, false, true);
    consistency("lex_similarity");
    consistency("num_sem_sets");
    consistency("deg_mat");
    consistency("eig_val_laplacian");
    consistency("eccentricity");
    consistency("semantic_entropy");
    density("md");
    density("rmd");
    density("rde");
    c.push_back({"hybrid", EstimatorFamily::Blended, false, false, false, true});
    return c;
  }();
  return catalog;
}

const EstimatorInfo& estimator_info(const std::string& id) {
  for (const auto& info : estimator_catalog()) {
    if (info.id == id) return info;
  }
  throw Error(ErrorKind::Config, "unknown estimator: " + id);
}

bool is_known_estimator(const std::string& id) {
  for (const auto& info : estimator_catalog()) {
    if (info.id == id) return true;
  }
  return false;
}

}  // namespace ragate
