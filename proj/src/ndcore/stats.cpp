#include "resexp/ndcore/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "resexp/error.hpp"

namespace resexp::nd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

Tensor column_variances(const Tensor& q) {
  if (q.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "column_variances needs a matrix");
  const Tensor mean = row_mean(q);
  Tensor var(Shape{q.cols()});
  if (q.rows() < 2) return var;
  for (std::size_t r = 0; r < q.rows(); ++r) {
    const auto row = q.row(r);
    for (std::size_t c = 0; c < q.cols(); ++c) {
      const double d = row[c] - mean[c];
      var[c] += d * d;
    }
  }
  var *= 1.0 / static_cast<double>(q.rows() - 1);
  return var;
}

double column_covariance(const Tensor& q, std::span<const double> means, std::size_t j, std::size_t k) {
  if (q.rows() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t r = 0; r < q.rows(); ++r) s += (q(r, j) - means[j]) * (q(r, k) - means[k]);
  return s / static_cast<double>(q.rows() - 1);
}

std::vector<std::pair<std::size_t, std::size_t>> sample_index_pairs(std::size_t n, std::size_t count,
                                                                     std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (n < 2) return out;
  const std::size_t total = n * (n - 1) / 2;
  if (count >= total) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) out.emplace_back(j, k);
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (out.size() < count) {
    std::size_t j = pick(rng), k = pick(rng);
    if (j == k) continue;
    if (j > k) std::swap(j, k);
    if (seen.emplace(j, k).second) out.emplace_back(j, k);
  }
  return out;
}

double wilson_upper(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) return 1.0;
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = p + z2 / (2.0 * n);
  const double spread = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return std::min(1.0, (centre + spread) / (1.0 + z2 / n));
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidArgument, "spearman needs paired data");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidArgument, "fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw Error(ErrorCode::InvalidArgument, "fit needs distinct abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

}  // namespace resexp::nd
