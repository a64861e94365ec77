#include "onlinehoi/geometry.hpp"

#include "onlinehoi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace onlinehoi::geometry {

namespace {

bool lex_less(const Points& p, int a, int b) {
  for (int c = 0; c < 3; ++c) {
    if (p(a, c) != p(b, c)) return p(a, c) < p(b, c);
  }
  return a < b;
}

// Larger distance wins. Distances equal up to rounding count as ties and go
// to the lexicographically smaller point, which keeps the choice stable
// under translation as well as permutation.
bool better(const Points& p, double da, int a, double db, int b) {
  if (std::abs(da - db) > 1e-12 * std::max(da, db)) return da > db;
  return lex_less(p, a, b);
}

}  // namespace

std::vector<int> farthest_point_sample(const Points& pts, int count) {
  const int n = static_cast<int>(pts.rows());
  if (count <= 0 || n == 0) return {};
  count = std::min(count, n);
  const Eigen::RowVector3d centroid = pts.colwise().mean();
  std::vector<double> dist(n);
  int first = 0;
  for (int i = 0; i < n; ++i) {
    dist[i] = (pts.row(i) - centroid).squaredNorm();
    if (i > 0 && better(pts, dist[i], i, dist[first], first)) first = i;
  }
  std::vector<int> chosen{first};
  for (int i = 0; i < n; ++i) dist[i] = (pts.row(i) - pts.row(first)).squaredNorm();
  while (static_cast<int>(chosen.size()) < count) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (best < 0 || better(pts, dist[i], i, dist[best], best)) best = i;
    }
    chosen.push_back(best);
    for (int i = 0; i < n; ++i) dist[i] = std::min(dist[i], (pts.row(i) - pts.row(best)).squaredNorm());
  }
  return chosen;
}

std::vector<int> radius_neighbors(const Points& pts, const Eigen::RowVector3d& center, double radius) {
  std::vector<int> out;
  const double r2 = radius * radius;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if ((pts.row(i) - center).squaredNorm() <= r2) out.push_back(static_cast<int>(i));
  }
  return out;
}

Interpolation inverse_distance_weights(const Points& sources, const Points& targets, int k) {
  if (sources.rows() == 0) throw InvalidParameter("inverse_distance_weights: no source points");
  Interpolation out;
  out.k = std::min<int>(k, static_cast<int>(sources.rows()));
  std::vector<int> order(sources.rows());
  std::vector<double> d2(sources.rows());
  for (Eigen::Index t = 0; t < targets.rows(); ++t) {
    for (Eigen::Index s = 0; s < sources.rows(); ++s) {
      const double d = (sources.row(s) - targets.row(t)).squaredNorm();
      d2[s] = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + out.k, order.end(),
                      [&](int a, int b) { return d2[a] != d2[b] ? d2[a] < d2[b] : a < b; });
    std::vector<double> w(out.k);
    if (d2[order[0]] == 0.0) {
      std::fill(w.begin(), w.end(), 0.0);
      w[0] = 1.0;
    } else {
      double total = 0.0;
      for (int j = 0; j < out.k; ++j) total += (w[j] = 1.0 / d2[order[j]]);
      for (double& x : w) x /= total;
    }
    for (int j = 0; j < out.k; ++j) {
      out.index.push_back(order[j]);
      out.weight.push_back(w[j]);
    }
  }
  return out;
}

}  // namespace onlinehoi::geometry
