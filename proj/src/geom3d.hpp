#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace spacap {

using Vec3 = std::array<double, 3>;

// Axis-aligned box, center/size in meters.
struct Aabb {
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};
  int class_id = 0;
  int color_id = 0;

  double min(int axis) const { return center[axis] - size[axis] / 2.0; }
  double max(int axis) const { return center[axis] + size[axis] / 2.0; }
  double len(int axis) const { return size[axis]; }
  double volume() const { return size[0] * size[1] * size[2]; }
  bool valid() const { return size[0] > 0 && size[1] > 0 && size[2] > 0; }
};

// Area limits and same-position tolerance for relation classification.
struct RelationParams {
  double alpha = 0.3;
  double beta = 0.7;
  double eps_ratio = 0.1;
};

// Per ordered pair: which half axis the first box sits on, relative to the
// second, along x/y/z. Each component in {-1, 0, +1}.
struct RelationTriplet {
  int lx = 0;
  int ly = 0;
  int lz = 0;

  RelationTriplet negated() const { return {-lx, -ly, -lz}; }
  bool operator==(const RelationTriplet&) const = default;
};

struct RelationMap {
  std::size_t m = 0;
  std::vector<RelationTriplet> labels;  // row-major m x m

  RelationTriplet& at(std::size_t i, std::size_t j) { return labels[i * m + j]; }
  const RelationTriplet& at(std::size_t i, std::size_t j) const { return labels[i * m + j]; }
};

double iou_aabb(const Aabb& a, const Aabb& b);

// Same-floor relation along x (axis=0) or y (axis=1).
int axis_relation_floor(const Aabb& i, const Aabb& j, int axis, const RelationParams& p);

int axis_relation_height(const Aabb& i, const Aabb& j, const RelationParams& p);

RelationTriplet classify_relation(const Aabb& i, const Aabb& j, const RelationParams& p);

// Classifies each unordered pair once (lower index as i) and mirrors the
// triplet into the reverse slot, so the map is antisymmetric by construction.
RelationMap relation_maps(const std::vector<Aabb>& boxes, const RelationParams& p);

// Index of the ground-truth box with the nearest center, ties to lowest index.
// Throws std::invalid_argument on empty gt.
std::vector<std::size_t> assign_nearest_gt(const std::vector<Vec3>& pred_centers,
                                           const std::vector<Aabb>& gt);

// Greedy descending-score NMS; returns kept indices.
std::vector<std::size_t> nms(const std::vector<Aabb>& boxes, const std::vector<double>& scores,
                             double iou_thresh);

}  // namespace spacap
