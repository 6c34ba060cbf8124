#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ragate/deciders.hpp"

using namespace ragate;

namespace {

DecisionRow row(const std::string& id, std::vector<double> f, int correct_norag,
                int correct_rag) {
  DecisionRow r;
  r.example_id = id;
  r.features = Eigen::Map<Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
  r.correct_norag = correct_norag;
  r.correct_rag = correct_rag;
  r.y = 1 - correct_norag;
  return r;
}

// Four scalar rows where retrieval is needed exactly for the two high scores.
DecisionTable staircase_table() {
  DecisionTable t;
  t.feature_names = {"max_entropy"};
  t.rows = {row("a", {1.0}, 1, 1), row("b", {2.0}, 1, 1), row("c", {3.0}, 0, 1),
            row("d", {4.0}, 0, 1)};
  return t;
}

DecisionTable clustered_table(int per_side) {
  DecisionTable t;
  t.feature_names = {"max_entropy"};
  for (int i = 0; i < per_side; ++i) {
    t.rows.push_back(row("lo" + std::to_string(i), {0.0 + 0.01 * i}, 1, 1));
    t.rows.push_back(row("hi" + std::to_string(i), {10.0 + 0.01 * i}, 0, 1));
  }
  return t;
}

}  // namespace

TEST_CASE("decision table validation") {
  auto t = staircase_table();
  CHECK_NOTHROW(t.validate());

  auto bad_y = t;
  bad_y.rows[0].y = 1;  // correct_norag stays 1
  CHECK_THROWS_AS(bad_y.validate(), Error);

  auto bad_dim = t;
  bad_dim.rows[1].features = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(bad_dim.validate(), Error);

  auto bad_val = t;
  bad_val.rows[2].features(0) = std::nan("");
  CHECK_THROWS_AS(bad_val.validate(), Error);

  CHECK(t.manifest_hash() != DecisionTable{{"perplexity"}, {}}.manifest_hash());
  CHECK(t.manifest_hash() == staircase_table().manifest_hash());
  CHECK(t.labels() == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("kind and mode names round-trip") {
  for (DeciderKind k : {DeciderKind::Threshold, DeciderKind::Logreg, DeciderKind::Tree,
                        DeciderKind::Knn, DeciderKind::Mlp}) {
    CHECK(decider_kind_from_name(decider_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(decider_kind_from_name("forest"), Error);
  CHECK(selection_mode_from_name("holdout") == SelectionMode::Holdout);
  CHECK(selection_mode_from_name("paper_faithful_test") == SelectionMode::PaperFaithfulTest);
  CHECK_THROWS_AS(selection_mode_from_name("oracle"), Error);
}

TEST_CASE("midpoints threshold picks the cheapest perfect split") {
  auto t = staircase_table();
  auto model = fit_threshold(t, ThresholdMode::Midpoints);
  CHECK(model.mode == "midpoints");
  CHECK(model.threshold.theta == 2.5);  // exact midpoint arithmetic
  CHECK(predict_all(model, t) == std::vector<int>{0, 0, 1, 1});
  CHECK(simulated_in_accuracy(model, t) == 1.0);
  CHECK(retrieval_rate(model, t) == 0.5);
}

TEST_CASE("log-grid threshold matches the midpoints decisions here") {
  auto t = staircase_table();
  auto model = fit_threshold(t, ThresholdMode::LogGrid200);
  CHECK(model.mode == "log_grid_200");
  CHECK(predict_all(model, t) == std::vector<int>{0, 0, 1, 1});
  // Ties on accuracy resolve to the lowest retrieval rate, so the boundary
  // cannot drift below the last skip-worthy score.
  CHECK(retrieval_rate(model, t) == 0.5);
}

TEST_CASE("threshold ties prefer lower retrieval then smaller theta") {
  // Retrieval never helps and never hurts: every theta gives accuracy 1,
  // so the tie-break must land on retrieving nothing.
  DecisionTable t;
  t.feature_names = {"max_entropy"};
  t.rows = {row("a", {1.0}, 1, 1), row("b", {2.0}, 1, 1)};
  auto model = fit_threshold(t, ThresholdMode::Midpoints);
  CHECK(retrieval_rate(model, t) == 0.0);
  CHECK(simulated_in_accuracy(model, t) == 1.0);
}

TEST_CASE("degenerate threshold falls back to the majority action") {
  DecisionTable t;
  t.feature_names = {"max_entropy"};
  t.rows = {row("a", {2.0}, 0, 1), row("b", {2.0}, 0, 1), row("c", {2.0}, 1, 0)};
  auto model = fit_threshold(t, ThresholdMode::LogGrid200);
  CHECK(model.threshold.degenerate);
  CHECK(model.threshold.majority == 1);  // retrieval wins 2:1
  Eigen::VectorXd x(1);
  x << 2.0;
  CHECK(model.predict(x) == 1);
  CHECK(model.decision_value(x) == 1.0);

  // A tie between the constant actions skips retrieval.
  DecisionTable tie;
  tie.feature_names = {"max_entropy"};
  tie.rows = {row("a", {2.0}, 0, 1), row("b", {2.0}, 1, 0)};
  auto skip = fit_threshold(tie, ThresholdMode::Midpoints);
  CHECK(skip.threshold.degenerate);
  CHECK(skip.threshold.majority == 0);
}

TEST_CASE("threshold rejects feature vectors") {
  DecisionTable t;
  t.feature_names = {"a", "b"};
  DecisionRow r = row("x", {1.0, 2.0}, 0, 1);
  t.rows = {r};
  CHECK_THROWS_AS(fit_threshold(t, ThresholdMode::Midpoints), Error);
}

TEST_CASE("logistic regression separates and its loss never increases") {
  auto t = clustered_table(10);
  auto model = fit_logreg(t);
  CHECK(model.kind == DeciderKind::Logreg);
  auto preds = predict_all(model, t);
  for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(preds[i] == t.rows[i].y);
  REQUIRE(model.loss_trajectory.size() >= 2);
  for (std::size_t i = 1; i < model.loss_trajectory.size(); ++i) {
    CHECK(model.loss_trajectory[i] <= model.loss_trajectory[i - 1] + 1e-12);
  }
  // decision_value is a probability for logreg.
  Eigen::VectorXd x(1);
  x << 10.0;
  CHECK(model.decision_value(x) > 0.5);
  x << 0.0;
  CHECK(model.decision_value(x) < 0.5);
}

TEST_CASE("zero-weight logreg resolves the tie toward retrieval") {
  DeciderModel model;
  model.kind = DeciderKind::Logreg;
  model.weights = Eigen::VectorXd::Zero(1);
  model.bias = 0.0;
  model.scale_mean = Eigen::VectorXd::Zero(1);
  model.scale_std = Eigen::VectorXd::Ones(1);
  Eigen::VectorXd x(1);
  x << 3.0;
  CHECK(model.predict(x) == 1);
  CHECK(model.decision_value(x) == 0.5);
}

TEST_CASE("depth-3 tree solves xor") {
  DecisionTable t;
  t.feature_names = {"f0", "f1"};
  t.rows = {row("00", {0.0, 0.0}, 1, 1), row("01", {0.0, 1.0}, 0, 1),
            row("10", {1.0, 0.0}, 0, 1), row("11", {1.0, 1.0}, 1, 1)};
  auto model = fit_tree(t);
  CHECK(model.kind == DeciderKind::Tree);
  CHECK(predict_all(model, t) == std::vector<int>{0, 1, 1, 0});
  CHECK(simulated_in_accuracy(model, t) == 1.0);
  // Tree decision values are just the hard label.
  Eigen::VectorXd x(2);
  x << 0.0, 1.0;
  CHECK(model.decision_value(x) == 1.0);
}

TEST_CASE("knn caps k at 15 and votes break ties toward retrieval") {
  auto t = clustered_table(10);
  auto model = fit_knn(t);
  CHECK(model.knn_k == 15);
  Eigen::VectorXd x(1);
  x << 0.05;
  CHECK(model.predict(x) == 0);
  x << 10.05;
  CHECK(model.predict(x) == 1);

  DecisionTable two;
  two.feature_names = {"s"};
  two.rows = {row("a", {0.0}, 1, 1), row("b", {1.0}, 0, 1)};
  auto small = fit_knn(two);
  CHECK(small.knn_k == 2);
  x << 0.5;
  CHECK(small.decision_value(x) == 0.5);
  CHECK(small.predict(x) == 1);
}

TEST_CASE("mlp fits a separable problem deterministically") {
  auto t = clustered_table(8);
  auto a = fit_mlp(t, 42);
  auto b = fit_mlp(t, 42);
  CHECK((a.mlp_w1 - b.mlp_w1).norm() == 0.0);
  CHECK(a.mlp_b3 == b.mlp_b3);
  auto preds = predict_all(a, t);
  for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(preds[i] == t.rows[i].y);

  auto c = fit_mlp(t, 43);
  CHECK((a.mlp_w1 - c.mlp_w1).norm() > 0.0);
}

TEST_CASE("fit_decider dispatches on kind") {
  auto t = staircase_table();
  CHECK(fit_decider(DeciderKind::Threshold, t, 1).kind == DeciderKind::Threshold);
  CHECK(fit_decider(DeciderKind::Logreg, t, 1).kind == DeciderKind::Logreg);
  CHECK(fit_decider(DeciderKind::Tree, t, 1).kind == DeciderKind::Tree);
  CHECK(fit_decider(DeciderKind::Knn, t, 1).kind == DeciderKind::Knn);
  CHECK(fit_decider(DeciderKind::Mlp, t, 1).kind == DeciderKind::Mlp);
  CHECK_THROWS_AS(fit_decider(DeciderKind::Tree, DecisionTable{}, 1), Error);
}

TEST_CASE("models serialize through the json envelope") {
  auto t = staircase_table();
  auto path = (std::filesystem::temp_directory_path() / "ragate_test_model.json").string();
  for (DeciderKind kind : {DeciderKind::Threshold, DeciderKind::Logreg, DeciderKind::Tree,
                           DeciderKind::Knn, DeciderKind::Mlp}) {
    auto model = fit_decider(kind, t, 7);
    auto j = model.to_json();
    CHECK(j.contains("kind"));
    CHECK(j.contains("params"));
    CHECK(j.contains("manifest_hash"));
    CHECK(j.contains("mode"));
    CHECK(j["manifest_hash"] == t.manifest_hash());

    model.save(path);
    auto back = DeciderModel::load(path);
    CHECK(back.kind == model.kind);
    CHECK(back.mode == model.mode);
    CHECK(predict_all(back, t) == predict_all(model, t));
    for (const auto& r : t.rows) {
      CHECK(back.decision_value(r.features) ==
            doctest::Approx(model.decision_value(r.features)).epsilon(1e-15));
    }
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(DeciderModel::load(path), Error);
}

TEST_CASE("simulated in-accuracy counts the chosen branch") {
  auto t = staircase_table();
  DeciderModel model;
  model.kind = DeciderKind::Threshold;
  model.threshold.theta = 2.5;
  CHECK(simulated_in_accuracy(model, t) == 1.0);
  model.threshold.theta = 0.0;  // retrieve everything
  CHECK(simulated_in_accuracy(model, t) == 1.0);
  model.threshold.theta = 10.0;  // skip everything
  CHECK(simulated_in_accuracy(model, t) == 0.5);
  CHECK(retrieval_rate(model, t) == 0.0);
  CHECK_THROWS_AS(simulated_in_accuracy(model, DecisionTable{}), Error);
}

TEST_CASE("selection reports the ranking and keeps earlier ties") {
  auto t = staircase_table();
  DeciderModel good;
  good.kind = DeciderKind::Threshold;
  good.threshold.theta = 2.5;
  DeciderModel bad;
  bad.kind = DeciderKind::Logreg;  // mislabeled on purpose: constant skip
  bad.weights = Eigen::VectorXd::Constant(1, -5.0);
  bad.bias = -10.0;
  bad.scale_mean = Eigen::VectorXd::Zero(1);
  bad.scale_std = Eigen::VectorXd::Ones(1);

  auto [chosen, report] = select_best({good, bad}, t, SelectionMode::Holdout);
  CHECK(chosen.kind == DeciderKind::Threshold);
  CHECK(report.chosen == "threshold");
  CHECK(report.mode == "holdout");
  CHECK(report.entries.size() == 2);
  CHECK(report.best == 1.0);
  CHECK(report.mean == doctest::Approx(0.75));
  CHECK(report.drop == doctest::Approx(0.25));
  CHECK(report.note.find("holdout") != std::string::npos);

  auto [_, leaky] = select_best({good}, t, SelectionMode::PaperFaithfulTest);
  CHECK(leaky.mode == "paper_faithful_test");
  CHECK(leaky.note.find("leak") != std::string::npos);

  // Equal models: the earlier one wins.
  auto [same, rep2] = select_best({good, good}, t, SelectionMode::Holdout);
  CHECK(rep2.chosen == "threshold");
  CHECK(rep2.best == rep2.entries[0].in_accuracy);

  CHECK_THROWS_AS(select_best({}, t, SelectionMode::Holdout), Error);
}
