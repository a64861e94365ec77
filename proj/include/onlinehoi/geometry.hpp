#pragma once

#include <Eigen/Dense>

#include <vector>

namespace onlinehoi::geometry {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Farthest-point sampling of `count` indices (clamped to the point count).
/// Starts from the point farthest from the centroid; distance ties go to the
/// lexicographically smallest coordinate, so the selected set does not
/// depend on the order of the input rows.
std::vector<int> farthest_point_sample(const Points& pts, int count);

/// Indices of all points within `radius` (inclusive) of `center`.
std::vector<int> radius_neighbors(const Points& pts, const Eigen::RowVector3d& center, double radius);

struct Interpolation {
  std::vector<int> index;      // k source indices per target, row-major
  std::vector<double> weight;  // matching normalized weights
  int k = 0;
};

/// Inverse-distance weights from each target to its k nearest sources.
/// An exact coincidence takes all the weight.
Interpolation inverse_distance_weights(const Points& sources, const Points& targets, int k = 3);

}  // namespace onlinehoi::geometry
