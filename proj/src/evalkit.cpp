#include "ragate/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ragate/numeric.hpp"

namespace ragate {
namespace {

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_cell(const std::optional<double>& v) {
  if (!v.has_value()) return "n/a";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", *v);
  return buf;
}

std::map<std::string, int> token_counts(const std::vector<std::string>& tokens) {
  std::map<std::string, int> counts;
  for (const auto& t : tokens) ++counts[t];
  return counts;
}

double pair_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  auto pc = token_counts(pred);
  auto gc = token_counts(gold);
  int overlap = 0;
  for (const auto& [tok, count] : pc) {
    auto it = gc.find(tok);
    if (it != gc.end()) overlap += std::min(count, it->second);
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

// ---------------------------------------------------------------------------
// Normalization and QA correctness

std::string normalize_answer(const std::string& text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream in(lowered);
  std::string token, out;
  while (in >> token) {
    if (token == "a" || token == "an" || token == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += token;
  }
  return out;
}

std::vector<std::string> answer_tokens(const std::string& text) {
  std::istringstream in(normalize_answer(text));
  std::vector<std::string> tokens;
  std::string token;
  while (in >> token) tokens.push_back(token);
  return tokens;
}

int in_accuracy(const std::string& pred, const std::vector<std::string>& golds) {
  std::string np = normalize_answer(pred);
  for (const auto& gold : golds) {
    if (np.find(normalize_answer(gold)) != std::string::npos) return 1;
  }
  return 0;
}

int exact_match(const std::string& pred, const std::vector<std::string>& golds) {
  std::string np = normalize_answer(pred);
  for (const auto& gold : golds) {
    if (np == normalize_answer(gold)) return 1;
  }
  return 0;
}

double f1(const std::string& pred, const std::vector<std::string>& golds) {
  auto pt = answer_tokens(pred);
  double best = 0.0;
  for (const auto& gold : golds) {
    best = std::max(best, pair_f1(pt, answer_tokens(gold)));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Efficiency and self-knowledge

Efficiency efficiency(const std::vector<RunRecord>& records) {
  if (records.empty()) throw Error(ErrorKind::Data, "efficiency over an empty record set");
  Efficiency e;
  for (const auto& r : records) {
    e.lmc += r.lm_calls;
    e.rc += r.retrieval_calls;
  }
  e.lmc /= static_cast<double>(records.size());
  e.rc /= static_cast<double>(records.size());
  return e;
}

std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                              std::string* reason) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw Error(ErrorKind::Data, "roc_auc needs matched non-empty scores and labels");
  }
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1 ? 1 : 0;
  std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    if (reason != nullptr) *reason = "one-class labels";
    return std::nullopt;
  }
  std::vector<double> ranks = average_ranks(scores, true);
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos_rank_sum += ranks[i];
  }
  double auc = (pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
               (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return auc;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorKind::Data, "spearman needs two equal-length vectors, n >= 2");
  }
  std::vector<double> rx = average_ranks(x, true);
  std::vector<double> ry = average_ranks(y, true);
  auto constant = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) == *std::min_element(v.begin(), v.end());
  };
  if (constant(rx) || constant(ry)) return std::nullopt;
  return pearson(rx, ry);
}

OverUnder over_under_confidence(const std::vector<int>& y_hat, const std::vector<int>& y) {
  if (y_hat.size() != y.size()) {
    throw Error(ErrorKind::Data, "over/under-confidence needs equal-length vectors");
  }
  double over_num = 0.0, over_den = 0.0, under_num = 0.0, under_den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double mismatch = y_hat[i] == y[i] ? 0.0 : 1.0;
    over_num += mismatch * (1.0 - y_hat[i]);
    over_den += 1.0 - y_hat[i];
    under_num += mismatch * y_hat[i];
    under_den += y_hat[i];
  }
  OverUnder result;
  if (over_den > 0.0) {
    result.over = over_num / over_den;
  } else {
    result.over_defined = false;
  }
  if (under_den > 0.0) {
    result.under = under_num / under_den;
  } else {
    result.under_defined = false;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<double> competition_ranks(const std::vector<double>& values, bool higher_better) {
  return average_ranks(values, !higher_better);
}

RankTable rank_table(const std::vector<std::map<std::string, std::optional<double>>>& per_dataset,
                     const std::vector<std::string>& methods, bool higher_better) {
  if (methods.size() < 2) throw Error(ErrorKind::Data, "rank table needs >= 2 methods");
  RankTable table;
  table.methods = methods;
  table.ranks.resize(per_dataset.size());

  for (std::size_t d = 0; d < per_dataset.size(); ++d) {
    std::vector<std::size_t> present;
    std::vector<double> values;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto it = per_dataset[d].find(methods[m]);
      if (it != per_dataset[d].end() && it->second.has_value()) {
        present.push_back(m);
        values.push_back(*it->second);
      }
    }
    table.ranks[d].assign(methods.size(), std::nullopt);
    if (values.empty()) continue;
    std::vector<double> ranks = competition_ranks(values, higher_better);
    for (std::size_t i = 0; i < present.size(); ++i) {
      table.ranks[d][present[i]] = ranks[i];
    }
  }

  table.average.assign(methods.size(), std::nullopt);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    double sum = 0.0;
    int count = 0;
    for (const auto& row : table.ranks) {
      if (row[m].has_value()) {
        sum += *row[m];
        ++count;
      }
    }
    if (count > 0) table.average[m] = sum / count;
  }
  return table;
}

MetricCorrelation metric_correlation(
    const std::vector<std::string>& metric_names,
    const std::vector<std::vector<std::vector<std::optional<double>>>>& values) {
  const std::size_t n_metrics = metric_names.size();
  MetricCorrelation out;
  out.metrics = metric_names;
  out.rho.assign(n_metrics, std::vector<std::optional<double>>(n_metrics, std::nullopt));

  // Pool z-scored columns: normalized[k][(dataset, method)] where present.
  std::size_t total_rows = 0;
  for (const auto& dataset : values) total_rows += dataset.size();
  std::vector<std::vector<std::optional<double>>> normalized(
      n_metrics, std::vector<std::optional<double>>(total_rows, std::nullopt));

  std::size_t row_base = 0;
  for (const auto& dataset : values) {
    const std::size_t n_methods = dataset.size();
    for (std::size_t k = 0; k < n_metrics; ++k) {
      double sum = 0.0;
      int count = 0;
      for (std::size_t m = 0; m < n_methods; ++m) {
        if (dataset[m][k].has_value()) {
          sum += *dataset[m][k];
          ++count;
        }
      }
      if (count == 0) continue;
      double mean = sum / count;
      double var = 0.0;
      for (std::size_t m = 0; m < n_methods; ++m) {
        if (dataset[m][k].has_value()) var += (*dataset[m][k] - mean) * (*dataset[m][k] - mean);
      }
      double sd = std::sqrt(var / count);
      for (std::size_t m = 0; m < n_methods; ++m) {
        if (dataset[m][k].has_value()) {
          normalized[k][row_base + m] = sd > 0.0 ? (*dataset[m][k] - mean) / sd : 0.0;
        }
      }
    }
    row_base += n_methods;
  }

  for (std::size_t a = 0; a < n_metrics; ++a) {
    out.rho[a][a] = 1.0;
    for (std::size_t b = a + 1; b < n_metrics; ++b) {
      std::vector<double> xa, xb;
      for (std::size_t r = 0; r < total_rows; ++r) {
        if (normalized[a][r].has_value() && normalized[b][r].has_value()) {
          xa.push_back(*normalized[a][r]);
          xb.push_back(*normalized[b][r]);
        }
      }
      if (xa.size() < 3) continue;
      auto rho = spearman(xa, xb);
      out.rho[a][b] = rho;
      out.rho[b][a] = rho;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

bool metric_higher_better(const std::string& metric) {
  return !(metric == "LMC" || metric == "RC" || metric == "Over" || metric == "Under");
}

std::string report_csv(const MetricsReport& report) {
  std::string out = "dataset,method,metric,value\n";
  for (std::size_t d = 0; d < report.datasets.size(); ++d) {
    for (const auto& method : report.methods) {
      auto mit = report.values[d].find(method);
      for (const auto& metric : report.metrics) {
        out += report.datasets[d] + "," + method + "," + metric + ",";
        if (mit != report.values[d].end()) {
          auto vit = mit->second.find(metric);
          if (vit != mit->second.end() && vit->second.has_value()) {
            out += format_value(*vit->second);
          }
        }
        out += "\n";
      }
    }
  }
  return out;
}

std::string report_markdown(const MetricsReport& report) {
  std::string out;
  for (std::size_t d = 0; d < report.datasets.size(); ++d) {
    out += "## " + report.datasets[d] + "\n\n";
    out += "| method |";
    for (const auto& metric : report.metrics) out += " " + metric + " |";
    out += "\n|---|";
    for (std::size_t k = 0; k < report.metrics.size(); ++k) out += "---|";
    out += "\n";

    auto cell = [&](const std::string& method, const std::string& metric) {
      auto mit = report.values[d].find(method);
      if (mit == report.values[d].end()) return std::optional<double>();
      auto vit = mit->second.find(metric);
      if (vit == mit->second.end()) return std::optional<double>();
      return vit->second;
    };

    for (const auto& method : report.methods) {
      out += "| " + method + " |";
      for (const auto& metric : report.metrics) {
        out += " " + format_cell(cell(method, metric)) + " |";
      }
      out += "\n";
    }

    if (!report.ue_methods.empty()) {
      out += "| best UE |";
      for (const auto& metric : report.metrics) {
        std::optional<double> best;
        for (const auto& method : report.ue_methods) {
          auto v = cell(method, metric);
          if (!v.has_value()) continue;
          if (!best.has_value() ||
              (metric_higher_better(metric) ? *v > *best : *v < *best)) {
            best = v;
          }
        }
        out += " " + format_cell(best) + " |";
      }
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

}  // namespace ragate
