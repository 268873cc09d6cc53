// Independent reference evaluator for the pairwise relation predicates.
// Deliberately shares no code with src/geom3d.cpp: each inequality is
// transcribed literally against raw box extents so the two implementations
// can disagree only if one of them is wrong.
#pragma once

#include "geom3d.hpp"

namespace spacap::oracle {

struct Extent {
  double lo, hi;  // bottom (wedge) and up (vee) along one axis
  double len() const { return hi - lo; }
};

inline Extent extent(const Aabb& b, int axis) {
  return {b.center[axis] - 0.5 * b.size[axis], b.center[axis] + 0.5 * b.size[axis]};
}

// o_i positive w.r.t. o_j along a floor axis, as the disjunction of the three
// figure cases. wedge = lower bound, vee = upper bound.
inline bool floor_positive(const Extent& i, const Extent& j, double alpha, double beta) {
  bool absolute = (i.lo >= j.lo) && (i.hi > j.hi);
  bool covered = (i.lo > j.lo + alpha * j.len()) && (j.lo + beta * j.len() < i.hi) &&
                 (i.hi <= j.hi);
  bool covering = (i.lo < j.lo) && (j.lo < i.lo + alpha * i.len()) &&
                  (j.hi < i.lo + beta * i.len());
  return absolute || covered || covering;
}

inline bool same_position(const Extent& i, const Extent& j, double eps) {
  return std::abs(i.hi - j.hi) <= eps && std::abs(i.lo - j.lo) <= eps;
}

inline int floor_relation(const Aabb& bi, const Aabb& bj, int axis, const RelationParams& p) {
  Extent i = extent(bi, axis), j = extent(bj, axis);
  double eps = p.eps_ratio * j.len();
  if (same_position(i, j, eps)) return 0;
  if (floor_positive(i, j, p.alpha, p.beta)) return +1;
  if (floor_positive(j, i, p.alpha, p.beta)) return -1;
  return 0;
}

inline int height_relation(const Aabb& bi, const Aabb& bj, const RelationParams& p) {
  Extent i = extent(bi, 2), j = extent(bj, 2);
  if (i.lo >= j.lo + p.alpha * j.len()) return +1;
  if (j.lo >= i.lo + p.alpha * i.len()) return -1;
  return 0;
}

inline RelationTriplet classify(const Aabb& bi, const Aabb& bj, const RelationParams& p) {
  return {floor_relation(bi, bj, 0, p), floor_relation(bi, bj, 1, p),
          height_relation(bi, bj, p)};
}

}  // namespace spacap::oracle
