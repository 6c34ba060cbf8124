#include "ragate/deciders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ragate/hash.hpp"
#include "ragate/numeric.hpp"

namespace ragate {
namespace {

constexpr double kStdFloor = 1e-9;

Eigen::VectorXd json_to_vec(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

Eigen::MatrixXd json_to_mat(const nlohmann::json& j) {
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()),
                    static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // population
};

Scaler fit_scaler(const Eigen::MatrixXd& x) {
  Scaler s;
  s.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.stddev = (centered.array().square().colwise().sum() / static_cast<double>(x.rows()))
                 .sqrt()
                 .matrix();
  return s;
}

Eigen::MatrixXd apply_scaler(const Scaler& s, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x.rowwise() - s.mean.transpose();
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    out.col(c) /= std::max(s.stddev(c), kStdFloor);
  }
  return out;
}

Eigen::VectorXd scale_point(const DeciderModel& m, const Eigen::VectorXd& x) {
  if (m.scale_mean.size() == 0) return x;
  Eigen::VectorXd out = x - m.scale_mean;
  for (Eigen::Index c = 0; c < out.size(); ++c) {
    out(c) /= std::max(m.scale_std(c), kStdFloor);
  }
  return out;
}

void require_rows(const DecisionTable& table) {
  table.validate();
  if (table.rows.empty()) throw Error(ErrorKind::Data, "empty decision table");
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Stable per-row log-loss: ln(1 + e^z) - y*z.
double log_loss(double z, int y) {
  return std::max(z, 0.0) - static_cast<double>(y) * z + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

// ---------------------------------------------------------------------------
// DecisionTable

void DecisionTable::validate() const {
  for (const auto& row : rows) {
    if (row.y != 1 - row.correct_norag) {
      throw Error(ErrorKind::Data, "decision row " + row.example_id +
                                       ": y must equal 1 - correct_norag");
    }
    if ((row.correct_rag != 0 && row.correct_rag != 1) ||
        (row.correct_norag != 0 && row.correct_norag != 1)) {
      throw Error(ErrorKind::Data, "decision row " + row.example_id + ": flags must be 0/1");
    }
    if (row.features.size() != static_cast<Eigen::Index>(feature_names.size())) {
      throw Error(ErrorKind::Data, "decision row " + row.example_id +
                                       ": feature dimension does not match the manifest");
    }
    for (Eigen::Index i = 0; i < row.features.size(); ++i) {
      if (!std::isfinite(row.features(i))) {
        throw Error(ErrorKind::Data, "decision row " + row.example_id + ": non-finite feature");
      }
    }
  }
}

Eigen::MatrixXd DecisionTable::feature_matrix() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(feature_names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = rows[r].features.transpose();
  }
  return x;
}

std::vector<int> DecisionTable::labels() const {
  std::vector<int> y;
  y.reserve(rows.size());
  for (const auto& row : rows) y.push_back(row.y);
  return y;
}

std::string DecisionTable::manifest_hash() const {
  std::string joined;
  for (std::size_t i = 0; i < feature_names.size(); ++i) {
    if (i > 0) joined += '\x1f';
    joined += feature_names[i];
  }
  return sha256_hex(joined);
}

void to_json(nlohmann::json& j, const DecisionRow& v) {
  j = nlohmann::json{{"example_id", v.example_id},
                     {"features", vec_to_json(v.features)},
                     {"y", v.y},
                     {"correct_norag", v.correct_norag},
                     {"correct_rag", v.correct_rag}};
}

void from_json(const nlohmann::json& j, DecisionRow& v) {
  v.example_id = j.at("example_id").get<std::string>();
  v.features = json_to_vec(j.at("features"));
  v.y = j.at("y").get<int>();
  v.correct_norag = j.at("correct_norag").get<int>();
  v.correct_rag = j.at("correct_rag").get<int>();
}

void to_json(nlohmann::json& j, const DecisionTable& v) {
  j = nlohmann::json{{"feature_names", v.feature_names}, {"rows", v.rows}};
}

void from_json(const nlohmann::json& j, DecisionTable& v) {
  v.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  v.rows = j.at("rows").get<std::vector<DecisionRow>>();
}

// ---------------------------------------------------------------------------
// Kind names

std::string decider_kind_name(DeciderKind k) {
  switch (k) {
    case DeciderKind::Threshold: return "threshold";
    case DeciderKind::Logreg: return "logreg";
    case DeciderKind::Tree: return "tree";
    case DeciderKind::Knn: return "knn";
    case DeciderKind::Mlp: return "mlp";
  }
  throw Error(ErrorKind::Internal, "unreachable decider kind");
}

DeciderKind decider_kind_from_name(const std::string& name) {
  if (name == "threshold") return DeciderKind::Threshold;
  if (name == "logreg") return DeciderKind::Logreg;
  if (name == "tree") return DeciderKind::Tree;
  if (name == "knn") return DeciderKind::Knn;
  if (name == "mlp") return DeciderKind::Mlp;
  throw Error(ErrorKind::Config, "unknown decider kind: " + name);
}

std::string selection_mode_name(SelectionMode m) {
  return m == SelectionMode::PaperFaithfulTest ? "paper_faithful_test" : "holdout";
}

SelectionMode selection_mode_from_name(const std::string& name) {
  if (name == "paper_faithful_test") return SelectionMode::PaperFaithfulTest;
  if (name == "holdout") return SelectionMode::Holdout;
  throw Error(ErrorKind::Config, "unknown selection mode: " + name);
}

// ---------------------------------------------------------------------------
// Prediction

int DeciderModel::predict(const Eigen::VectorXd& x) const {
  switch (kind) {
    case DeciderKind::Threshold: {
      if (threshold.degenerate) return threshold.majority;
      return x(0) > threshold.theta ? 1 : 0;
    }
    case DeciderKind::Logreg: {
      Eigen::VectorXd z = scale_point(*this, x);
      return weights.dot(z) + bias >= 0.0 ? 1 : 0;
    }
    case DeciderKind::Tree: {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& n = tree[static_cast<std::size_t>(node)];
        node = x(n.feature) <= n.threshold ? n.left : n.right;
      }
      return tree[static_cast<std::size_t>(node)].label;
    }
    case DeciderKind::Knn: {
      return decision_value(x) >= 0.5 ? 1 : 0;
    }
    case DeciderKind::Mlp: {
      return decision_value(x) >= 0.5 ? 1 : 0;
    }
  }
  throw Error(ErrorKind::Internal, "unreachable decider kind");
}

double DeciderModel::decision_value(const Eigen::VectorXd& x) const {
  switch (kind) {
    case DeciderKind::Threshold:
      if (threshold.degenerate) return threshold.majority == 1 ? 1.0 : -1.0;
      return x(0) - threshold.theta;
    case DeciderKind::Logreg: {
      Eigen::VectorXd z = scale_point(*this, x);
      return sigmoid(weights.dot(z) + bias);
    }
    case DeciderKind::Tree:
      return static_cast<double>(predict(x));
    case DeciderKind::Knn: {
      Eigen::VectorXd z = scale_point(*this, x);
      std::vector<std::pair<double, Eigen::Index>> dist;
      dist.reserve(static_cast<std::size_t>(knn_x.rows()));
      for (Eigen::Index r = 0; r < knn_x.rows(); ++r) {
        dist.emplace_back((knn_x.row(r).transpose() - z).squaredNorm(), r);
      }
      std::sort(dist.begin(), dist.end());
      int votes = 0;
      for (int i = 0; i < knn_k; ++i) {
        votes += knn_y[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)];
      }
      return static_cast<double>(votes) / static_cast<double>(knn_k);
    }
    case DeciderKind::Mlp: {
      Eigen::VectorXd z = scale_point(*this, x);
      Eigen::VectorXd h1 = (mlp_w1 * z + mlp_b1).cwiseMax(0.0);
      Eigen::VectorXd h2 = (mlp_w2 * h1 + mlp_b2).cwiseMax(0.0);
      return sigmoid(mlp_w3.dot(h2) + mlp_b3);
    }
  }
  throw Error(ErrorKind::Internal, "unreachable decider kind");
}

// ---------------------------------------------------------------------------
// Threshold

DeciderModel fit_threshold(const DecisionTable& table, ThresholdMode mode) {
  require_rows(table);
  if (table.feature_names.size() != 1) {
    throw Error(ErrorKind::Config, "threshold decider needs scalar scores");
  }
  const std::size_t n = table.rows.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = table.rows[i].features(0);

  DeciderModel model;
  model.kind = DeciderKind::Threshold;
  model.manifest_hash = table.manifest_hash();
  model.mode = mode == ThresholdMode::LogGrid200 ? "log_grid_200" : "midpoints";

  const double lo = *std::min_element(scores.begin(), scores.end());
  const double hi = *std::max_element(scores.begin(), scores.end());
  const double span = hi - lo;

  if (span <= 0.0) {
    // Constant scores cannot separate anything; fall back to whichever
    // constant action wins on the training split (ties skip retrieval).
    double rag = 0.0, norag = 0.0;
    for (const auto& row : table.rows) {
      rag += row.correct_rag;
      norag += row.correct_norag;
    }
    model.threshold.degenerate = true;
    model.threshold.majority = rag > norag ? 1 : 0;
    model.threshold.theta = hi;
    return model;
  }

  std::vector<double> candidates;
  if (mode == ThresholdMode::LogGrid200) {
    const double eps = 1e-12 + 1e-6 * span;
    const double log_lo = std::log(eps);
    const double log_hi = std::log(span + eps);
    for (int i = 0; i < 200; ++i) {
      double shifted = std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(i) / 199.0);
      candidates.push_back(shifted + lo - eps);
    }
  } else {
    std::vector<double> unique_sorted(scores);
    std::sort(unique_sorted.begin(), unique_sorted.end());
    unique_sorted.erase(std::unique(unique_sorted.begin(), unique_sorted.end()),
                        unique_sorted.end());
    candidates.push_back(lo - 1.0);  // retrieve everything
    for (std::size_t i = 0; i + 1 < unique_sorted.size(); ++i) {
      candidates.push_back(0.5 * (unique_sorted[i] + unique_sorted[i + 1]));
    }
    candidates.push_back(hi);  // retrieve nothing (comparison is strict)
  }

  double best_acc = -1.0, best_rate = 2.0, best_theta = 0.0;
  for (double theta : candidates) {
    double acc = 0.0, rate = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      bool retrieve = scores[i] > theta;
      acc += retrieve ? table.rows[i].correct_rag : table.rows[i].correct_norag;
      rate += retrieve ? 1.0 : 0.0;
    }
    acc /= static_cast<double>(n);
    rate /= static_cast<double>(n);
    if (acc > best_acc || (acc == best_acc && rate < best_rate) ||
        (acc == best_acc && rate == best_rate && theta < best_theta)) {
      best_acc = acc;
      best_rate = rate;
      best_theta = theta;
    }
  }
  model.threshold.theta = best_theta;
  return model;
}

// ---------------------------------------------------------------------------
// Logistic regression

DeciderModel fit_logreg(const DecisionTable& table) {
  require_rows(table);
  const Eigen::Index n = static_cast<Eigen::Index>(table.rows.size());
  Eigen::MatrixXd raw = table.feature_matrix();
  Scaler scaler = fit_scaler(raw);
  Eigen::MatrixXd x = apply_scaler(scaler, raw);
  const Eigen::Index d = x.cols();

  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = table.rows[static_cast<std::size_t>(i)].y;

  const double lambda = 1.0 / static_cast<double>(n);

  // Parameter vector [w; b]; the bias stays unpenalized.
  Eigen::MatrixXd xb(n, d + 1);
  xb.leftCols(d) = x;
  xb.col(d).setOnes();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);

  auto loss_at = [&](const Eigen::VectorXd& wv) {
    Eigen::VectorXd z = xb * wv;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      loss += log_loss(z(i), static_cast<int>(y(i)));
    }
    loss /= static_cast<double>(n);
    loss += 0.5 * lambda * wv.head(d).squaredNorm();
    return loss;
  };

  DeciderModel model;
  model.kind = DeciderKind::Logreg;
  model.manifest_hash = table.manifest_hash();
  model.mode = "newton";
  model.loss_trajectory.push_back(loss_at(w));

  const int max_iters = 200;
  bool converged = false;
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::VectorXd z = xb * w;
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i) = sigmoid(z(i));

    Eigen::VectorXd grad = xb.transpose() * (p - y) / static_cast<double>(n);
    grad.head(d) += lambda * w.head(d);
    if (grad.norm() <= 1e-8) {
      converged = true;
      break;
    }

    Eigen::VectorXd s = p.array() * (1.0 - p.array());
    Eigen::MatrixXd hess = xb.transpose() * s.asDiagonal() * xb / static_cast<double>(n);
    hess.topLeftCorner(d, d) += lambda * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd dir = hess.ldlt().solve(grad);

    // Damping keeps the loss non-increasing (the convexity property tests
    // rely on a monotone trajectory).
    double base = model.loss_trajectory.back();
    double step = 1.0;
    Eigen::VectorXd next = w - step * dir;
    double next_loss = loss_at(next);
    int halvings = 0;
    while (next_loss > base && halvings < 60) {
      step *= 0.5;
      next = w - step * dir;
      next_loss = loss_at(next);
      ++halvings;
    }
    w = next;
    model.loss_trajectory.push_back(next_loss);
  }
  if (!converged) {
    Eigen::VectorXd z = xb * w;
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i) = sigmoid(z(i));
    Eigen::VectorXd grad = xb.transpose() * (p - y) / static_cast<double>(n);
    grad.head(d) += lambda * w.head(d);
    converged = grad.norm() <= 1e-8;
  }

  model.scale_mean = scaler.mean;
  model.scale_std = scaler.stddev;
  model.weights = w.head(d);
  model.bias = w(d);
  model.converged = converged;
  return model;
}

// ---------------------------------------------------------------------------
// Decision tree

namespace {

double gini(int count1, int total) {
  if (total == 0) return 0.0;
  double p1 = static_cast<double>(count1) / static_cast<double>(total);
  return 1.0 - p1 * p1 - (1.0 - p1) * (1.0 - p1);
}

int majority_label(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  int ones = 0;
  for (std::size_t i : idx) ones += labels[i];
  int zeros = static_cast<int>(idx.size()) - ones;
  return ones >= zeros ? 1 : 0;  // tie retrieves
}

struct TreeBuilder {
  const Eigen::MatrixXd& x;
  const std::vector<int>& y;
  std::vector<TreeNode> nodes;

  int build(const std::vector<std::size_t>& idx, int depth) {
    int node_index = static_cast<int>(nodes.size());
    nodes.emplace_back();

    int ones = 0;
    for (std::size_t i : idx) ones += y[i];
    bool pure = ones == 0 || ones == static_cast<int>(idx.size());

    if (pure || depth >= 3) {
      nodes[static_cast<std::size_t>(node_index)].label = majority_label(y, idx);
      return node_index;
    }

    // Best split: lowest weighted Gini; ties prefer the lowest feature index,
    // then the lowest threshold. Splitting at zero gain is allowed while the
    // node is impure (XOR-style data needs it).
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_impurity = std::numeric_limits<double>::infinity();
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      std::vector<double> values;
      values.reserve(idx.size());
      for (std::size_t i : idx) values.push_back(x(static_cast<Eigen::Index>(i), f));
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      for (std::size_t v = 0; v + 1 < values.size(); ++v) {
        double threshold = 0.5 * (values[v] + values[v + 1]);
        int left_total = 0, left_ones = 0;
        for (std::size_t i : idx) {
          if (x(static_cast<Eigen::Index>(i), f) <= threshold) {
            ++left_total;
            left_ones += y[i];
          }
        }
        int right_total = static_cast<int>(idx.size()) - left_total;
        int right_ones = ones - left_ones;
        double impurity = (static_cast<double>(left_total) * gini(left_ones, left_total) +
                           static_cast<double>(right_total) * gini(right_ones, right_total)) /
                          static_cast<double>(idx.size());
        if (impurity < best_impurity) {
          best_impurity = impurity;
          best_feature = static_cast<int>(f);
          best_threshold = threshold;
        }
      }
    }

    if (best_feature < 0) {  // identical feature vectors, nothing to split on
      nodes[static_cast<std::size_t>(node_index)].label = majority_label(y, idx);
      return node_index;
    }

    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : idx) {
      if (x(static_cast<Eigen::Index>(i), best_feature) <= best_threshold) {
        left_idx.push_back(i);
      } else {
        right_idx.push_back(i);
      }
    }
    int left = build(left_idx, depth + 1);
    int right = build(right_idx, depth + 1);
    TreeNode& node = nodes[static_cast<std::size_t>(node_index)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = left;
    node.right = right;
    return node_index;
  }
};

}  // namespace

DeciderModel fit_tree(const DecisionTable& table) {
  require_rows(table);
  Eigen::MatrixXd x = table.feature_matrix();
  std::vector<int> y = table.labels();
  std::vector<std::size_t> idx(table.rows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  TreeBuilder builder{x, y, {}};
  builder.build(idx, 0);

  DeciderModel model;
  model.kind = DeciderKind::Tree;
  model.manifest_hash = table.manifest_hash();
  model.mode = "gini_depth3";
  model.tree = std::move(builder.nodes);
  return model;
}

// ---------------------------------------------------------------------------
// KNN

DeciderModel fit_knn(const DecisionTable& table) {
  require_rows(table);
  Eigen::MatrixXd raw = table.feature_matrix();
  Scaler scaler = fit_scaler(raw);

  DeciderModel model;
  model.kind = DeciderKind::Knn;
  model.manifest_hash = table.manifest_hash();
  model.mode = "knn15";
  model.scale_mean = scaler.mean;
  model.scale_std = scaler.stddev;
  model.knn_x = apply_scaler(scaler, raw);
  model.knn_y = table.labels();
  model.knn_k = std::min<int>(15, static_cast<int>(table.rows.size()));
  return model;
}

// ---------------------------------------------------------------------------
// MLP

DeciderModel fit_mlp(const DecisionTable& table, std::uint64_t seed) {
  require_rows(table);
  const Eigen::Index n = static_cast<Eigen::Index>(table.rows.size());
  Eigen::MatrixXd raw = table.feature_matrix();
  Scaler scaler = fit_scaler(raw);
  Eigen::MatrixXd x = apply_scaler(scaler, raw);
  const Eigen::Index d = x.cols();
  constexpr Eigen::Index kHidden = 64;

  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = table.rows[static_cast<std::size_t>(i)].y;

  RngStream rng(seed);
  auto init = [&](Eigen::MatrixXd& m, double fan_in) {
    double scale = std::sqrt(2.0 / fan_in);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = scale * rng.next_normal();
    }
  };

  Eigen::MatrixXd w1(kHidden, d), w2(kHidden, kHidden);
  Eigen::VectorXd b1 = Eigen::VectorXd::Zero(kHidden), b2 = Eigen::VectorXd::Zero(kHidden);
  Eigen::VectorXd w3(kHidden);
  double b3 = 0.0;
  init(w1, static_cast<double>(d));
  init(w2, static_cast<double>(kHidden));
  {
    Eigen::MatrixXd w3m(kHidden, 1);
    init(w3m, static_cast<double>(kHidden));
    w3 = w3m.col(0);
  }

  const double lr = 1e-2;
  for (int epoch = 0; epoch < 500; ++epoch) {
    Eigen::MatrixXd z1 = (x * w1.transpose()).rowwise() + b1.transpose();
    Eigen::MatrixXd a1 = z1.cwiseMax(0.0);
    Eigen::MatrixXd z2 = (a1 * w2.transpose()).rowwise() + b2.transpose();
    Eigen::MatrixXd a2 = z2.cwiseMax(0.0);
    Eigen::VectorXd z3 = a2 * w3;
    z3.array() += b3;
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i) = sigmoid(z3(i));

    Eigen::VectorXd dz3 = (p - y) / static_cast<double>(n);
    Eigen::VectorXd gw3 = a2.transpose() * dz3;
    double gb3 = dz3.sum();
    Eigen::MatrixXd da2 = dz3 * w3.transpose();
    Eigen::MatrixXd dz2 = (z2.array() > 0.0).select(da2, 0.0);
    Eigen::MatrixXd gw2 = dz2.transpose() * a1;
    Eigen::VectorXd gb2 = dz2.colwise().sum();
    Eigen::MatrixXd da1 = dz2 * w2;
    Eigen::MatrixXd dz1 = (z1.array() > 0.0).select(da1, 0.0);
    Eigen::MatrixXd gw1 = dz1.transpose() * x;
    Eigen::VectorXd gb1 = dz1.colwise().sum();

    w1 -= lr * gw1;
    b1 -= lr * gb1;
    w2 -= lr * gw2;
    b2 -= lr * gb2;
    w3 -= lr * gw3;
    b3 -= lr * gb3;
  }

  DeciderModel model;
  model.kind = DeciderKind::Mlp;
  model.manifest_hash = table.manifest_hash();
  model.mode = "gd500";
  model.scale_mean = scaler.mean;
  model.scale_std = scaler.stddev;
  model.mlp_w1 = std::move(w1);
  model.mlp_b1 = std::move(b1);
  model.mlp_w2 = std::move(w2);
  model.mlp_b2 = std::move(b2);
  model.mlp_w3 = std::move(w3);
  model.mlp_b3 = b3;
  return model;
}

// ---------------------------------------------------------------------------
// Dispatch, evaluation, selection

DeciderModel fit_decider(DeciderKind kind, const DecisionTable& table, std::uint64_t seed,
                         ThresholdMode threshold_mode) {
  switch (kind) {
    case DeciderKind::Threshold: return fit_threshold(table, threshold_mode);
    case DeciderKind::Logreg: return fit_logreg(table);
    case DeciderKind::Tree: return fit_tree(table);
    case DeciderKind::Knn: return fit_knn(table);
    case DeciderKind::Mlp: return fit_mlp(table, seed);
  }
  throw Error(ErrorKind::Internal, "unreachable decider kind");
}

std::vector<int> predict_all(const DeciderModel& model, const DecisionTable& table) {
  std::vector<int> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) out.push_back(model.predict(row.features));
  return out;
}

double simulated_in_accuracy(const DeciderModel& model, const DecisionTable& table) {
  if (table.rows.empty()) throw Error(ErrorKind::Data, "empty decision table");
  double acc = 0.0;
  for (const auto& row : table.rows) {
    acc += model.predict(row.features) == 1 ? row.correct_rag : row.correct_norag;
  }
  return acc / static_cast<double>(table.rows.size());
}

double retrieval_rate(const DeciderModel& model, const DecisionTable& table) {
  if (table.rows.empty()) throw Error(ErrorKind::Data, "empty decision table");
  double rate = 0.0;
  for (const auto& row : table.rows) rate += model.predict(row.features);
  return rate / static_cast<double>(table.rows.size());
}

void to_json(nlohmann::json& j, const SelectionEntry& v) {
  j = nlohmann::json{{"kind", v.kind},
                     {"in_accuracy", v.in_accuracy},
                     {"retrieval_rate", v.retrieval_rate}};
}

void from_json(const nlohmann::json& j, SelectionEntry& v) {
  v.kind = j.at("kind").get<std::string>();
  v.in_accuracy = j.at("in_accuracy").get<double>();
  v.retrieval_rate = j.at("retrieval_rate").get<double>();
}

void to_json(nlohmann::json& j, const SelectionReport& v) {
  j = nlohmann::json{{"mode", v.mode},     {"note", v.note}, {"entries", v.entries},
                     {"chosen", v.chosen}, {"best", v.best}, {"mean", v.mean},
                     {"drop", v.drop}};
}

void from_json(const nlohmann::json& j, SelectionReport& v) {
  v.mode = j.at("mode").get<std::string>();
  v.note = j.at("note").get<std::string>();
  v.entries = j.at("entries").get<std::vector<SelectionEntry>>();
  v.chosen = j.at("chosen").get<std::string>();
  v.best = j.at("best").get<double>();
  v.mean = j.at("mean").get<double>();
  v.drop = j.at("drop").get<double>();
}

std::pair<DeciderModel, SelectionReport> select_best(const std::vector<DeciderModel>& models,
                                                     const DecisionTable& eval,
                                                     SelectionMode mode) {
  if (models.empty()) throw Error(ErrorKind::Config, "select_best needs at least one model");
  SelectionReport report;
  report.mode = selection_mode_name(mode);
  report.note = mode == SelectionMode::PaperFaithfulTest
                    ? "selected on the test split; test labels leak into model choice"
                    : "selected on a holdout slice reserved from the training split";

  std::size_t best_index = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    SelectionEntry entry;
    entry.kind = decider_kind_name(models[i].kind);
    entry.in_accuracy = simulated_in_accuracy(models[i], eval);
    entry.retrieval_rate = retrieval_rate(models[i], eval);
    sum += entry.in_accuracy;
    if (entry.in_accuracy > report.best || i == 0) {
      report.best = entry.in_accuracy;
      best_index = i;
    }
    report.entries.push_back(std::move(entry));
  }
  report.mean = sum / static_cast<double>(models.size());
  report.drop = report.best - report.mean;
  report.chosen = decider_kind_name(models[best_index].kind);
  return {models[best_index], report};
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json DeciderModel::to_json() const {
  nlohmann::json params;
  switch (kind) {
    case DeciderKind::Threshold:
      params = {{"theta", threshold.theta},
                {"direction", threshold.direction},
                {"degenerate", threshold.degenerate},
                {"majority", threshold.majority}};
      break;
    case DeciderKind::Logreg:
      params = {{"mean", vec_to_json(scale_mean)},
                {"std", vec_to_json(scale_std)},
                {"weights", vec_to_json(weights)},
                {"bias", bias},
                {"converged", converged}};
      break;
    case DeciderKind::Tree: {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : tree) {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right},
                         {"label", n.label}});
      }
      params = {{"nodes", std::move(nodes)}};
      break;
    }
    case DeciderKind::Knn:
      params = {{"mean", vec_to_json(scale_mean)},
                {"std", vec_to_json(scale_std)},
                {"k", knn_k},
                {"train_x", mat_to_json(knn_x)},
                {"train_y", knn_y}};
      break;
    case DeciderKind::Mlp:
      params = {{"mean", vec_to_json(scale_mean)}, {"std", vec_to_json(scale_std)},
                {"w1", mat_to_json(mlp_w1)},       {"b1", vec_to_json(mlp_b1)},
                {"w2", mat_to_json(mlp_w2)},       {"b2", vec_to_json(mlp_b2)},
                {"w3", vec_to_json(mlp_w3)},       {"b3", mlp_b3}};
      break;
  }
  return nlohmann::json{{"kind", decider_kind_name(kind)},
                        {"params", std::move(params)},
                        {"manifest_hash", manifest_hash},
                        {"mode", mode}};
}

DeciderModel DeciderModel::from_json(const nlohmann::json& j) {
  DeciderModel m;
  m.kind = decider_kind_from_name(j.at("kind").get<std::string>());
  m.manifest_hash = j.at("manifest_hash").get<std::string>();
  m.mode = j.at("mode").get<std::string>();
  const nlohmann::json& params = j.at("params");
  switch (m.kind) {
    case DeciderKind::Threshold:
      m.threshold.theta = params.at("theta").get<double>();
      m.threshold.direction = params.at("direction").get<std::string>();
      m.threshold.degenerate = params.at("degenerate").get<bool>();
      m.threshold.majority = params.at("majority").get<int>();
      break;
    case DeciderKind::Logreg:
      m.scale_mean = json_to_vec(params.at("mean"));
      m.scale_std = json_to_vec(params.at("std"));
      m.weights = json_to_vec(params.at("weights"));
      m.bias = params.at("bias").get<double>();
      m.converged = params.at("converged").get<bool>();
      break;
    case DeciderKind::Tree:
      for (const auto& n : params.at("nodes")) {
        TreeNode node;
        node.feature = n.at("feature").get<int>();
        node.threshold = n.at("threshold").get<double>();
        node.left = n.at("left").get<int>();
        node.right = n.at("right").get<int>();
        node.label = n.at("label").get<int>();
        m.tree.push_back(node);
      }
      break;
    case DeciderKind::Knn:
      m.scale_mean = json_to_vec(params.at("mean"));
      m.scale_std = json_to_vec(params.at("std"));
      m.knn_k = params.at("k").get<int>();
      m.knn_x = json_to_mat(params.at("train_x"));
      m.knn_y = params.at("train_y").get<std::vector<int>>();
      break;
    case DeciderKind::Mlp:
      m.scale_mean = json_to_vec(params.at("mean"));
      m.scale_std = json_to_vec(params.at("std"));
      m.mlp_w1 = json_to_mat(params.at("w1"));
      m.mlp_b1 = json_to_vec(params.at("b1"));
      m.mlp_w2 = json_to_mat(params.at("w2"));
      m.mlp_b2 = json_to_vec(params.at("b2"));
      m.mlp_w3 = json_to_vec(params.at("w3"));
      m.mlp_b3 = params.at("b3").get<double>();
      break;
  }
  return m;
}

void DeciderModel::save(const std::string& path) const {
  write_text_file_atomic(path, to_json().dump(2) + "\n");
}

DeciderModel DeciderModel::load(const std::string& path) {
  return from_json(nlohmann::json::parse(read_text_file(path)));
}

}  // namespace ragate
