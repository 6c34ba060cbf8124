#pragma once

// Independent re-implementations used to cross-check the library. Each oracle
// is deliberately written from the definition, not by calling library code,
// so a shared bug cannot hide. Long double accumulation where it is cheap.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ragate/core.hpp"

namespace oracle {

inline double floor_p(double p) { return p < 1e-12 ? 1e-12 : p; }

// Per-step probability list: alternatives plus the tail bucket when present.
inline std::vector<double> step_probs(const ragate::TokenStep& step) {
  std::vector<double> probs;
  for (const auto& alt : step.alternatives) probs.push_back(floor_p(std::exp(alt.logprob)));
  if (step.tail_mass > 1e-12) probs.push_back(step.tail_mass);
  return probs;
}

inline std::vector<double> entropies(const ragate::GenerationTrace& trace) {
  std::vector<double> out;
  for (const auto& step : trace.steps) {
    long double h = 0.0L;
    for (double p : step_probs(step)) h -= static_cast<long double>(p) * std::log(p);
    out.push_back(static_cast<double>(h));
  }
  return out;
}

inline double max_entropy(const ragate::GenerationTrace& trace) {
  auto h = entropies(trace);
  return *std::max_element(h.begin(), h.end());
}

inline double mean_entropy(const ragate::GenerationTrace& trace) {
  auto h = entropies(trace);
  long double s = std::accumulate(h.begin(), h.end(), 0.0L);
  return static_cast<double>(s / static_cast<long double>(h.size()));
}

inline double min_entropy(const ragate::GenerationTrace& trace) {
  auto h = entropies(trace);
  return *std::min_element(h.begin(), h.end());
}

inline double median_entropy(const ragate::GenerationTrace& trace) {
  auto h = entropies(trace);
  std::sort(h.begin(), h.end());
  std::size_t n = h.size();
  return n % 2 == 1 ? h[n / 2] : 0.5 * (h[n / 2 - 1] + h[n / 2]);
}

inline double perplexity(const ragate::GenerationTrace& trace) {
  long double s = 0.0L;
  for (const auto& step : trace.steps) s -= std::log(floor_p(std::exp(step.logprob)));
  return static_cast<double>(std::exp(s / static_cast<long double>(trace.steps.size())));
}

// Negated mean Renyi divergence from uniform over the effective support.
inline double renyi_neg(const ragate::GenerationTrace& trace, double alpha) {
  long double mean = 0.0L;
  for (const auto& step : trace.steps) {
    auto probs = step_probs(step);
    long double s = 0.0L;
    for (double p : probs) s += std::pow(static_cast<long double>(p), alpha);
    long double v = static_cast<long double>(probs.size());
    long double div =
        (std::log(static_cast<long double>(floor_p(static_cast<double>(s)))) +
         (alpha - 1.0L) * std::log(v)) /
        (alpha - 1.0L);
    mean += div;
  }
  return static_cast<double>(-mean / static_cast<long double>(trace.steps.size()));
}

inline double fisher_rao(const ragate::GenerationTrace& trace) {
  const long double pi = 3.14159265358979323846L;
  long double mean = 0.0L;
  for (const auto& step : trace.steps) {
    auto probs = step_probs(step);
    long double v = static_cast<long double>(probs.size());
    long double b = 0.0L;
    for (double p : probs) b += std::sqrt(static_cast<long double>(p) / v);
    if (b > 1.0L) b = 1.0L;
    if (b < 0.0L) b = 0.0L;
    mean += (2.0L / pi) * std::acos(b);
  }
  mean /= static_cast<long double>(trace.steps.size());
  return static_cast<double>(1.0L - mean);
}

// BFS component count over a thresholded similarity graph.
inline int components_bfs(const Eigen::MatrixXd& m, double theta) {
  const int n = static_cast<int>(m.rows());
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  int count = 0;
  for (int s = 0; s < n; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    ++count;
    std::queue<int> q;
    q.push(s);
    seen[static_cast<std::size_t>(s)] = true;
    while (!q.empty()) {
      int i = q.front();
      q.pop();
      for (int j = 0; j < n; ++j) {
        if (j == i || seen[static_cast<std::size_t>(j)]) continue;
        if (m(i, j) >= theta) {
          seen[static_cast<std::size_t>(j)] = true;
          q.push(j);
        }
      }
    }
  }
  return count;
}

// Okapi BM25 scored one document at a time straight from the formula.
struct BruteBm25 {
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  std::vector<std::vector<std::string>> doc_tokens;
  std::vector<std::string> doc_ids;
  double avgdl = 0.0;

  void build(const std::vector<ragate::Document>& corpus,
             const std::vector<std::vector<std::string>>& tokenized) {
    doc_tokens = tokenized;
    doc_ids.clear();
    for (const auto& d : corpus) doc_ids.push_back(d.doc_id);
    long double total = 0.0L;
    for (const auto& toks : doc_tokens) total += static_cast<long double>(toks.size());
    avgdl = doc_tokens.empty() ? 0.0
                               : static_cast<double>(total / static_cast<long double>(doc_tokens.size()));
  }

  int doc_freq(const std::string& term) const {
    int n = 0;
    for (const auto& toks : doc_tokens) {
      if (std::find(toks.begin(), toks.end(), term) != toks.end()) ++n;
    }
    return n;
  }

  double score(const std::vector<std::string>& query, std::size_t doc) const {
    const double n_docs = static_cast<double>(doc_tokens.size());
    const double dl = static_cast<double>(doc_tokens[doc].size());
    double total = 0.0;
    for (const auto& term : query) {
      int tf = 0;
      for (const auto& t : doc_tokens[doc]) {
        if (t == term) ++tf;
      }
      if (tf == 0) continue;
      int nt = doc_freq(term);
      double idf = std::log(1.0 + (n_docs - nt + 0.5) / (nt + 0.5));
      double denom = tf + kK1 * (1.0 - kB + kB * dl / avgdl);
      // left-associated like a plain reading of the formula; keeps the
      // comparison against the index bit-exact rather than within an ulp
      total += idf * tf * (1.0 + kK1) / denom;
    }
    return total;
  }
};

// Second, independent coding of the tie-corrected Friedman statistic:
//   chi2_F = (k-1) * sum_j (S_j - n(k+1)/2)^2 / (A2 - C)
// where ranks come from a sort-based routine (not the library's).
inline std::vector<double> rank_row(const std::vector<double>& row) {
  const std::size_t k = row.size();
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  std::vector<double> ranks(k, 0.0);
  std::size_t i = 0;
  while (i < k) {
    std::size_t j = i;
    while (j + 1 < k && row[idx[j + 1]] == row[idx[i]]) ++j;
    double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = shared;
    i = j + 1;
  }
  return ranks;
}

struct FriedmanOracle {
  double statistic = 0.0;
  bool degenerate = false;  // zero denominator: every row fully tied
};

inline FriedmanOracle friedman_stat(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  const std::size_t k = rows.front().size();
  std::vector<double> colsum(k, 0.0);
  long double a2 = 0.0L;
  for (const auto& row : rows) {
    auto ranks = rank_row(row);
    for (std::size_t j = 0; j < k; ++j) {
      colsum[j] += ranks[j];
      a2 += static_cast<long double>(ranks[j]) * ranks[j];
    }
  }
  const long double c =
      static_cast<long double>(n) * k * (k + 1.0L) * (k + 1.0L) / 4.0L;
  long double num = 0.0L;
  const long double target = static_cast<long double>(n) * (k + 1.0L) / 2.0L;
  for (std::size_t j = 0; j < k; ++j) {
    long double d = static_cast<long double>(colsum[j]) - target;
    num += d * d;
  }
  FriedmanOracle out;
  long double denom = a2 - c;
  if (denom <= 1e-12L) {
    out.degenerate = true;
    return out;
  }
  out.statistic = static_cast<double>((k - 1.0L) * num / denom);
  return out;
}

// Direct enumeration of the two confidence sums.
struct OverUnderOracle {
  double over = 0.0;
  double under = 0.0;
  bool over_defined = true;
  bool under_defined = true;
};

inline OverUnderOracle over_under(const std::vector<int>& y_hat, const std::vector<int>& y) {
  int skip = 0, skip_wrong = 0, ret = 0, ret_wrong = 0;
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    if (y_hat[i] == 0) {
      ++skip;
      if (y[i] != 0) ++skip_wrong;
    } else {
      ++ret;
      if (y[i] != 1) ++ret_wrong;
    }
  }
  OverUnderOracle o;
  if (skip == 0) {
    o.over_defined = false;
  } else {
    o.over = static_cast<double>(skip_wrong) / static_cast<double>(skip);
  }
  if (ret == 0) {
    o.under_defined = false;
  } else {
    o.under = static_cast<double>(ret_wrong) / static_cast<double>(ret);
  }
  return o;
}

}  // namespace oracle
