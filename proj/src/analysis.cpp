#include "ragate/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "ragate/numeric.hpp"

namespace ragate {
namespace {

// Critical values of the Nemenyi q statistic (studentized range / sqrt(2))
// for k = 2..10 methods, the sizes the post-hoc tables cover.
constexpr double kCrit10[9] = {1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};
constexpr double kCrit05[9] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
constexpr double kCrit01[9] = {2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646};

}  // namespace

// ---------------------------------------------------------------------------
// OOD transfer

std::vector<TransferCell> ood_matrix(const std::vector<std::string>& datasets,
                                     const Eigen::MatrixXd& values) {
  const Eigen::Index n = static_cast<Eigen::Index>(datasets.size());
  if (values.rows() != n || values.cols() != n) {
    throw Error(ErrorKind::Data, "transfer matrix shape does not match the dataset list");
  }
  std::vector<TransferCell> cells;
  cells.reserve(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      TransferCell cell;
      cell.train_dataset = datasets[static_cast<std::size_t>(i)];
      cell.test_dataset = datasets[static_cast<std::size_t>(j)];
      cell.in_domain = values(j, j);
      cell.transferred = values(i, j);
      if (i == j) {
        cell.change_pct = 0.0;
      } else if (cell.in_domain != 0.0) {
        cell.change_pct = 100.0 * (cell.transferred - cell.in_domain) / cell.in_domain;
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Friedman / Nemenyi

FriedmanResult friedman(const Eigen::MatrixXd& values) {
  const Eigen::Index n = values.rows();
  const Eigen::Index k = values.cols();
  if (n < 2 || k < 2) throw Error(ErrorKind::Data, "friedman needs n >= 2 datasets, k >= 2 methods");

  FriedmanResult result;
  result.n = static_cast<int>(n);
  result.k = static_cast<int>(k);

  Eigen::MatrixXd ranks(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) row[static_cast<std::size_t>(j)] = values(i, j);
    std::vector<double> r = average_ranks(row, true);
    for (Eigen::Index j = 0; j < k; ++j) ranks(i, j) = r[static_cast<std::size_t>(j)];
  }

  result.rank_means.resize(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    result.rank_means[static_cast<std::size_t>(j)] = ranks.col(j).mean();
  }

  // Tie-corrected form: (k-1) * sum_j (R_j - n(k+1)/2)^2 / (sum R_ij^2 - C)
  // with C = n k (k+1)^2 / 4; reduces to the familiar 12n/(k(k+1)) formula
  // when no ties are present.
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  const double c = nd * kd * (kd + 1.0) * (kd + 1.0) / 4.0;
  const double a2 = ranks.array().square().sum();
  double numerator = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    double col_sum = ranks.col(j).sum();
    double dev = col_sum - nd * (kd + 1.0) / 2.0;
    numerator += dev * dev;
  }
  numerator *= (kd - 1.0);
  const double denominator = a2 - c;

  if (denominator <= 1e-12) {
    result.all_tied = true;
    result.statistic = 0.0;
    result.p_value = 1.0;
    return result;
  }
  result.statistic = numerator / denominator;
  result.p_value = chi_square_sf(result.statistic, static_cast<int>(k) - 1);
  return result;
}

NemenyiResult nemenyi(const std::vector<double>& rank_means, int n) {
  const int k = static_cast<int>(rank_means.size());
  if (k < 2) throw Error(ErrorKind::Data, "nemenyi needs >= 2 methods");
  if (k > 10) {
    throw Error(ErrorKind::Config, "nemenyi critical tables cover at most 10 methods");
  }
  if (n < 1) throw Error(ErrorKind::Data, "nemenyi needs n >= 1 datasets");

  const double denom = std::sqrt(static_cast<double>(k) * (k + 1.0) / (6.0 * n));
  NemenyiResult result;
  result.q = Eigen::MatrixXd::Zero(k, k);
  result.p_bracket.assign(static_cast<std::size_t>(k),
                          std::vector<std::string>(static_cast<std::size_t>(k), "1.00"));

  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      double q = std::abs(rank_means[static_cast<std::size_t>(i)] -
                          rank_means[static_cast<std::size_t>(j)]) /
                 denom;
      result.q(i, j) = q;
      std::string bracket;
      if (q == 0.0) {
        bracket = "1.00";
      } else if (q >= kCrit01[k - 2]) {
        bracket = "<0.01";
      } else if (q >= kCrit05[k - 2]) {
        bracket = "<0.05";
      } else if (q >= kCrit10[k - 2]) {
        bracket = "<0.10";
      } else {
        bracket = ">=0.10";
      }
      result.p_bracket[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = bracket;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rademacher

RademacherResult rademacher_estimate(const Eigen::MatrixXd& features, RademacherClass cls,
                                     int draws, std::uint64_t seed) {
  const Eigen::Index n = features.rows();
  if (n < 1) throw Error(ErrorKind::Data, "rademacher needs at least one point");
  if (draws < 1) throw Error(ErrorKind::Config, "rademacher needs at least one draw");

  RademacherResult result;
  result.n = static_cast<int>(n);
  result.draws = draws;
  result.low_draws = draws < 10;

  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < features.cols(); ++c) names.push_back("f" + std::to_string(c));

  RngStream rng(seed);
  std::vector<double> correlations, baselines;
  correlations.reserve(static_cast<std::size_t>(draws));
  baselines.reserve(static_cast<std::size_t>(draws));

  for (int t = 0; t < draws; ++t) {
    std::vector<int> sigma(static_cast<std::size_t>(n));
    double sigma_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      sigma[static_cast<std::size_t>(i)] = rng.next_sign() ? 1 : -1;
      sigma_sum += sigma[static_cast<std::size_t>(i)];
    }
    baselines.push_back(std::abs(sigma_sum) / static_cast<double>(n));

    std::vector<int> predictions(static_cast<std::size_t>(n));
    if (cls == RademacherClass::Constant) {
      int constant = sigma_sum >= 0.0 ? 1 : 0;
      std::fill(predictions.begin(), predictions.end(), constant);
    } else {
      DecisionTable table;
      table.feature_names = names;
      for (Eigen::Index i = 0; i < n; ++i) {
        DecisionRow row;
        row.example_id = "p" + std::to_string(i);
        row.features = features.row(i).transpose();
        row.y = (sigma[static_cast<std::size_t>(i)] + 1) / 2;
        row.correct_norag = 1 - row.y;
        row.correct_rag = row.y;
        table.rows.push_back(std::move(row));
      }
      DeciderKind kind;
      switch (cls) {
        case RademacherClass::Threshold: kind = DeciderKind::Threshold; break;
        case RademacherClass::Logreg: kind = DeciderKind::Logreg; break;
        case RademacherClass::Tree: kind = DeciderKind::Tree; break;
        case RademacherClass::Knn: kind = DeciderKind::Knn; break;
        case RademacherClass::Mlp: kind = DeciderKind::Mlp; break;
        default: throw Error(ErrorKind::Internal, "unreachable rademacher class");
      }
      DeciderModel model = fit_decider(kind, table, seed + static_cast<std::uint64_t>(t) + 1,
                                       ThresholdMode::Midpoints);
      predictions = predict_all(model, table);
    }

    double corr = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      corr += sigma[static_cast<std::size_t>(i)] *
              (2.0 * predictions[static_cast<std::size_t>(i)] - 1.0);
    }
    correlations.push_back(corr / static_cast<double>(n));
  }

  double mean = 0.0;
  for (double c : correlations) mean += c;
  mean /= static_cast<double>(draws);
  double var = 0.0;
  for (double c : correlations) var += (c - mean) * (c - mean);
  var = draws > 1 ? var / static_cast<double>(draws - 1) : 0.0;

  result.estimate = mean;
  result.stderr_ = std::sqrt(var / static_cast<double>(draws));
  double base = 0.0;
  for (double b : baselines) base += b;
  base /= static_cast<double>(draws);
  result.baseline = base;
  result.normalized = base > 0.0 ? mean / base : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Sharpness

double sharpness_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, double bias,
                            double lambda) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n < 1 || d < 1) throw Error(ErrorKind::Data, "sharpness needs a non-empty design matrix");
  if (w.size() != d) throw Error(ErrorKind::Data, "weight dimension mismatch in sharpness");

  Eigen::VectorXd z = x * w;
  z.array() += bias;
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0 / (1.0 + std::exp(-z(i)));
    s(i) = p * (1.0 - p);
  }
  Eigen::MatrixXd h = x.transpose() * s.asDiagonal() * x / static_cast<double>(n);
  h.diagonal().array() += lambda;

  // Power iteration; H is PSD so the iterate converges to the top eigenvalue.
  // The start vector is slightly tilted to avoid landing orthogonal to it.
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = 1.0 + 1e-3 * static_cast<double>(i);
  v.normalize();
  double lambda_max = 0.0;
  for (int iter = 0; iter < 100000; ++iter) {
    Eigen::VectorXd u = h * v;
    double norm = u.norm();
    if (norm == 0.0) return 0.0;
    double next = v.dot(u);
    v = u / norm;
    if (std::abs(next - lambda_max) <= 1e-8 * std::max(1.0, std::abs(next))) {
      return next;
    }
    lambda_max = next;
  }
  return lambda_max;
}

SharpnessResult sharpness(const DeciderModel& model, const DecisionTable& table) {
  if (model.kind != DeciderKind::Logreg) {
    throw Error(ErrorKind::Config, "sharpness is defined for the logistic decider only");
  }
  if (!model.converged) {
    throw Error(ErrorKind::Data, "logistic model did not converge; refit before sharpness");
  }
  if (table.rows.empty()) throw Error(ErrorKind::Data, "empty decision table");

  Eigen::MatrixXd raw = table.feature_matrix();
  Eigen::MatrixXd x = raw.rowwise() - model.scale_mean.transpose();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    x.col(c) /= std::max(model.scale_std(c), 1e-9);
  }
  const double lambda = 1.0 / static_cast<double>(table.rows.size());

  SharpnessResult result;
  result.n = static_cast<int>(table.rows.size());
  result.lambda_max = sharpness_lambda_max(x, model.weights, model.bias, lambda);
  result.log10_lambda_max = std::log10(std::max(result.lambda_max, 1e-300));
  return result;
}

// ---------------------------------------------------------------------------
// Feature importance

FeatureImportance hybrid_feature_importance(const DeciderModel& model,
                                            const DecisionTable& table) {
  const std::size_t d = table.feature_names.size();
  std::vector<double> importance(d, 0.0);

  if (model.kind == DeciderKind::Logreg) {
    if (static_cast<std::size_t>(model.weights.size()) != d) {
      throw Error(ErrorKind::Data, "model dimension does not match the feature manifest");
    }
    for (std::size_t f = 0; f < d; ++f) {
      importance[f] = std::abs(model.weights(static_cast<Eigen::Index>(f)));
    }
  } else if (model.kind == DeciderKind::Tree) {
    // Replay the fitted tree over the table, crediting each internal node's
    // weighted Gini decrease to its split feature.
    struct Frame {
      int node;
      std::vector<std::size_t> idx;
    };
    std::vector<std::size_t> all(table.rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<Frame> stack{{0, std::move(all)}};
    auto gini_of = [&](const std::vector<std::size_t>& idx) {
      if (idx.empty()) return 0.0;
      double ones = 0.0;
      for (std::size_t i : idx) ones += table.rows[i].y;
      double p = ones / static_cast<double>(idx.size());
      return 1.0 - p * p - (1.0 - p) * (1.0 - p);
    };
    while (!stack.empty()) {
      Frame frame = std::move(stack.back());
      stack.pop_back();
      const TreeNode& node = model.tree[static_cast<std::size_t>(frame.node)];
      if (node.feature < 0 || frame.idx.empty()) continue;
      std::vector<std::size_t> left, right;
      for (std::size_t i : frame.idx) {
        if (table.rows[i].features(node.feature) <= node.threshold) {
          left.push_back(i);
        } else {
          right.push_back(i);
        }
      }
      double total = static_cast<double>(frame.idx.size());
      double decrease = gini_of(frame.idx) -
                        (static_cast<double>(left.size()) * gini_of(left) +
                         static_cast<double>(right.size()) * gini_of(right)) /
                            total;
      importance[static_cast<std::size_t>(node.feature)] +=
          decrease * total / static_cast<double>(table.rows.size());
      stack.push_back({node.left, std::move(left)});
      stack.push_back({node.right, std::move(right)});
    }
  } else {
    throw Error(ErrorKind::Config,
                "feature importance supports the logistic and tree deciders only");
  }

  FeatureImportance result;
  for (std::size_t f = 0; f < d; ++f) {
    result.ranked.emplace_back(table.feature_names[f], importance[f]);
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  result.degenerate = true;
  for (const auto& [name, value] : result.ranked) {
    if (value > 1e-15) result.degenerate = false;
  }

  Eigen::MatrixXd x = table.feature_matrix();
  for (std::size_t a = 0; a + 1 < d; ++a) {
    for (std::size_t b = a + 1; b < d; ++b) {
      std::vector<double> xa, xb;
      xa.reserve(table.rows.size());
      xb.reserve(table.rows.size());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        xa.push_back(x(r, static_cast<Eigen::Index>(a)));
        xb.push_back(x(r, static_cast<Eigen::Index>(b)));
      }
      try {
        if (std::abs(pearson(xa, xb)) > 0.99) {
          result.collinear.emplace_back(table.feature_names[a], table.feature_names[b]);
        }
      } catch (const std::domain_error&) {
        // constant columns carry no correlation signal
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Classifier sensitivity

std::vector<SensitivityRow> classifier_sensitivity(
    const std::vector<std::string>& methods,
    const std::vector<std::vector<std::vector<double>>>& values) {
  const std::size_t m = methods.size();
  if (values.size() != m) throw Error(ErrorKind::Data, "method list does not match values");
  if (m == 0) return {};
  const std::size_t n_datasets = values[0].size();
  for (const auto& per_dataset : values) {
    if (per_dataset.size() != n_datasets) {
      throw Error(ErrorKind::Data, "ragged dataset dimension in sensitivity input");
    }
    for (const auto& per_classifier : per_dataset) {
      if (per_classifier.size() < 2) {
        throw Error(ErrorKind::Data, "classifier sensitivity needs >= 2 classifiers");
      }
    }
  }

  std::vector<SensitivityRow> rows(m);
  // mean/max aggregates per method per dataset
  std::vector<std::vector<double>> mean_table(m, std::vector<double>(n_datasets, 0.0));
  std::vector<std::vector<double>> max_table(m, std::vector<double>(n_datasets, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    rows[i].method = methods[i];
    double drop_sum = 0.0;
    for (std::size_t d = 0; d < n_datasets; ++d) {
      const auto& vals = values[i][d];
      double mx = *std::max_element(vals.begin(), vals.end());
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      drop_sum += mx - mean;
      mean_table[i][d] = mean;
      max_table[i][d] = mx;
    }
    rows[i].drop = drop_sum / static_cast<double>(n_datasets);
  }

  for (std::size_t d = 0; d < n_datasets; ++d) {
    std::vector<double> mean_col(m), max_col(m);
    for (std::size_t i = 0; i < m; ++i) {
      mean_col[i] = mean_table[i][d];
      max_col[i] = max_table[i][d];
    }
    std::vector<double> mean_ranks = average_ranks(mean_col, false);  // higher is better
    std::vector<double> max_ranks = average_ranks(max_col, false);
    for (std::size_t i = 0; i < m; ++i) {
      rows[i].mean_rank += mean_ranks[i] / static_cast<double>(n_datasets);
      rows[i].max_rank += max_ranks[i] / static_cast<double>(n_datasets);
    }
  }
  for (auto& row : rows) row.rank_difference = row.mean_rank - row.max_rank;
  return rows;
}

}  // namespace ragate
