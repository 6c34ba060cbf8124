#pragma once

// Small shared numerics: tie-averaged ranks, correlation, the chi-square
// survival function, union-find, and a platform-stable RNG stream. Kept free
// of any dependency beyond the standard library so both the metric kit and
// the analysis module can use it.

#include <cstdint>
#include <vector>

namespace ragate {

/// Ranks 1..n with ties sharing the average of the positions they occupy.
/// `ascending` ranks the smallest value 1; pass false to rank the largest 1.
std::vector<double> average_ranks(const std::vector<double>& values, bool ascending = true);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Regularized upper incomplete gamma Q(a, x); series + continued fraction.
double regularized_gamma_q(double a, double x);

/// P(X >= x) for a chi-square variable with `dof` degrees of freedom.
double chi_square_sf(double x, int dof);

class UnionFind {
 public:
  explicit UnionFind(std::size_t n);
  std::size_t find(std::size_t i);
  void unite(std::size_t a, std::size_t b);
  std::size_t component_count() const { return components_; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> rank_;
  std::size_t components_;
};

/// Deterministic RNG stream (splitmix64 counter). Standard-library
/// distributions are implementation-defined, so anything that must replay
/// byte-identically across toolchains draws from this instead.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next_u64();
  double next_unit();                    // [0, 1)
  double next_normal();                  // Box-Muller, cached second value
  int next_int(int bound);               // uniform in [0, bound)
  bool next_sign();                      // fair coin

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ragate
