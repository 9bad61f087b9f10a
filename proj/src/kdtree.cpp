#include "synergrasp/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace synergrasp {

namespace {
constexpr Eigen::Index kLeafSize = 12;
}

KdTree::KdTree(const Points& points) : pts_(points), order_(static_cast<std::size_t>(points.rows())) {
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  if (points.rows() > 0) build(0, points.rows());
}

int KdTree::build(Eigen::Index begin, Eigen::Index end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (Eigen::Index i = begin; i < end; ++i) {
    const Vec3 p = pts_.row(order_[static_cast<std::size_t>(i)]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const Eigen::Index mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Eigen::Index a, Eigen::Index b) { return pts_(a, axis) < pts_(b, axis); });
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = pts_(order_[static_cast<std::size_t>(mid)], axis);
  const int l = build(begin, mid);
  const int r = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = l;
  nodes_[static_cast<std::size_t>(id)].right = r;
  return id;
}

void KdTree::search(int node, const Vec3& q, Eigen::Index& best, double& best_d2) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (Eigen::Index i = n.begin; i < n.end; ++i) {
      const Eigen::Index k = order_[static_cast<std::size_t>(i)];
      const double d2 = (pts_.row(k).transpose() - q).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = k;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff < best_d2) search(far, q, best, best_d2);
}

std::pair<Eigen::Index, double> KdTree::nearest(const Vec3& q) const {
  Eigen::Index best = -1;
  double d2 = std::numeric_limits<double>::infinity();
  if (!nodes_.empty()) search(0, q, best, d2);
  return {best, d2};
}

}  // namespace synergrasp
