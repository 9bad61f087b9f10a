#pragma once

#include <Eigen/Core>
#include <vector>

#include "synergrasp/cloudio.hpp"

namespace synergrasp {

/// Static 3-D kd-tree over the rows of a point matrix. The matrix must outlive the tree.
class KdTree {
 public:
  explicit KdTree(const Points& points);

  /// Index of the nearest point and its squared distance.
  std::pair<Eigen::Index, double> nearest(const Vec3& q) const;

 private:
  struct Node {
    Eigen::Index begin, end;  // range in order_
    int axis = -1;            // -1: leaf
    double split = 0;
    int left = -1, right = -1;
  };
  int build(Eigen::Index begin, Eigen::Index end);
  void search(int node, const Vec3& q, Eigen::Index& best, double& best_d2) const;

  const Points& pts_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

}  // namespace synergrasp
