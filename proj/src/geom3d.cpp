#include "geom3d.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spacap {

double iou_aabb(const Aabb& a, const Aabb& b) {
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    double lo = std::max(a.min(k), b.min(k));
    double hi = std::min(a.max(k), b.max(k));
    if (hi <= lo) return 0.0;
    inter *= hi - lo;
  }
  double uni = a.volume() + b.volume() - inter;
  return inter / uni;
}

int axis_relation_floor(const Aabb& i, const Aabb& j, int axis, const RelationParams& p) {
  const double i_lo = i.min(axis), i_hi = i.max(axis), i_len = i.len(axis);
  const double j_lo = j.min(axis), j_hi = j.max(axis), j_len = j.len(axis);

  // Same position: both ends within tolerance eps = eps_ratio * j side length.
  const double eps = p.eps_ratio * j_len;
  if (std::abs(i_hi - j_hi) <= eps && std::abs(i_lo - j_lo) <= eps) return 0;

  auto absolute_pos = [&](double a_lo, double a_hi, double b_lo, double b_hi) {
    return a_lo >= b_lo && a_hi > b_hi;
  };
  auto covered_pos = [&](double a_lo, double a_hi, double b_lo, double b_len) {
    return a_lo > b_lo + p.alpha * b_len && b_lo + p.beta * b_len < a_hi &&
           a_hi <= b_lo + b_len;
  };
  auto covering_pos = [&](double a_lo, double a_len, double b_lo, double b_hi) {
    return a_lo < b_lo && b_lo < a_lo + p.alpha * a_len && b_hi < a_lo + p.beta * a_len;
  };

  if (absolute_pos(i_lo, i_hi, j_lo, j_hi)) return +1;
  if (covered_pos(i_lo, i_hi, j_lo, j_len)) return +1;
  if (covering_pos(i_lo, i_len, j_lo, j_hi)) return +1;
  // Mirrored negatives: the same predicates with i and j roles swapped.
  if (absolute_pos(j_lo, j_hi, i_lo, i_hi)) return -1;
  if (covered_pos(j_lo, j_hi, i_lo, i_len)) return -1;
  if (covering_pos(j_lo, j_len, i_lo, i_hi)) return -1;
  return 0;
}

int axis_relation_height(const Aabb& i, const Aabb& j, const RelationParams& p) {
  if (i.min(2) >= j.min(2) + p.alpha * j.len(2)) return +1;
  if (j.min(2) >= i.min(2) + p.alpha * i.len(2)) return -1;
  return 0;
}

RelationTriplet classify_relation(const Aabb& i, const Aabb& j, const RelationParams& p) {
  return {axis_relation_floor(i, j, 0, p), axis_relation_floor(i, j, 1, p),
          axis_relation_height(i, j, p)};
}

RelationMap relation_maps(const std::vector<Aabb>& boxes, const RelationParams& p) {
  RelationMap map;
  map.m = boxes.size();
  map.labels.assign(map.m * map.m, RelationTriplet{});
  for (std::size_t i = 0; i < map.m; ++i) {
    for (std::size_t j = i + 1; j < map.m; ++j) {
      RelationTriplet t = classify_relation(boxes[i], boxes[j], p);
      map.at(i, j) = t;
      map.at(j, i) = t.negated();
    }
  }
  return map;
}

std::vector<std::size_t> assign_nearest_gt(const std::vector<Vec3>& pred_centers,
                                           const std::vector<Aabb>& gt) {
  if (gt.empty()) throw std::invalid_argument("assign_nearest_gt: no ground-truth boxes");
  std::vector<std::size_t> out(pred_centers.size(), 0);
  for (std::size_t n = 0; n < pred_centers.size(); ++n) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      double d2 = 0;
      for (int k = 0; k < 3; ++k) {
        double d = pred_centers[n][k] - gt[g].center[k];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        out[n] = g;
      }
    }
  }
  return out;
}

std::vector<std::size_t> nms(const std::vector<Aabb>& boxes, const std::vector<double>& scores,
                             double iou_thresh) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: size mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou_aabb(boxes[idx], boxes[k]) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace spacap
