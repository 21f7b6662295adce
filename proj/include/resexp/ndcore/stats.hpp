#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "resexp/ndcore/tensor.hpp"

namespace resexp::nd {

// Deterministic child seed for stream `index` of a run seeded with `seed`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

// Per-column sample variance of the rows of q, denominator rows-1 (0 for a single row).
Tensor column_variances(const Tensor& q);
// Sample covariance of columns j and k, denominator rows-1.
double column_covariance(const Tensor& q, std::span<const double> means, std::size_t j, std::size_t k);

// `count` distinct unordered pairs (j < k) drawn uniformly from {0..n-1}; all pairs if count >= n(n-1)/2.
std::vector<std::pair<std::size_t, std::size_t>> sample_index_pairs(std::size_t n, std::size_t count,
                                                                     std::mt19937_64& rng);

// Upper end of the two-sided Wilson score interval for a binomial proportion.
double wilson_upper(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

// Spearman rank correlation with average ranks for ties. NaN if either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LinearFit least_squares(std::span<const double> x, std::span<const double> y);

}  // namespace resexp::nd
