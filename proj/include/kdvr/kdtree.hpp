#pragma once

#include "kdvr/core.hpp"

namespace kdvr {

// Equal-split K-D tree over point indices. Every node keeps the tight box of
// its subtree plus a padded box used for ray traversal; sibling point sets
// partition the parent's (left gets ceil(n/2), ordered by coordinate then
// index on the widest raw axis). Nodes at the same depth form a "layer";
// rendering consumes the bottom four non-leaf layers, growing the fifth.

struct KdBuildOptions {
  int max_depth = 21;      // capacity 2^max_depth points
  double pad_ratio = 0.05; // per side, of each axis extent
  double pad_floor = -1.0; // per side, scene units; < 0 resolves to 1e-4 * root diagonal
};

struct KdNode {
  Aabb raw_box;
  Aabb padded_box;
  int32_t left = -1, right = -1;  // -1: leaf
  uint32_t begin = 0, end = 0;    // range into the permutation
  int32_t depth = 0;
  int32_t split_axis = -1;

  bool leaf() const { return left < 0; }
  uint32_t count() const { return end - begin; }
};

struct RaySegment {
  double l = 0.0, r = 0.0;  // 0 <= l < r
  int32_t node = -1;
  int32_t depth = -1;
};

struct KnnResult {
  std::vector<uint32_t> indices;      // ascending by (squared distance, index)
  std::vector<double> sq_distances;
};

class KdVoxelTree {
 public:
  // Throws SizeError for |P| < 2, CapacityError for |P| > 2^max_depth.
  static KdVoxelTree build(const IndexedPointCloud& cloud, const KdBuildOptions& opts = {});

  const std::vector<KdNode>& nodes() const { return nodes_; }
  const std::vector<uint32_t>& permutation() const { return perm_; }
  const KdNode& root() const { return nodes_[0]; }
  size_t point_count() const { return perm_.size(); }

  int max_node_depth() const { return max_node_depth_; }
  int band_lo() const { return band_lo_; }
  int band_hi() const { return band_hi_; }
  int grow_depth() const { return grow_depth_; }
  double pad_ratio() const { return pad_ratio_; }
  double pad_floor() const { return pad_floor_; }

  const std::vector<int32_t>& layer(int depth) const;  // node ids at a depth
  // Padded boxes of every node at a depth. RangeError outside [0, max depth].
  std::vector<Aabb> layer_boxes(int depth) const;
  double mean_padded_edge(int depth) const;

  // Exact K nearest neighbors, ties by smaller index. Pre: 1 <= K <= |P|.
  KnnResult knn_query(const Vec3& q, int K) const;
  // Same contract, writing into caller storage (sized K). warm may carry up to
  // warm_count indices seeded as initial candidates (results are identical to
  // a cold query; seeding only tightens the prune bound).
  void knn_into(const Vec3& q, int K, uint32_t* out_idx, double* out_sqd,
                const uint32_t* warm = nullptr, int warm_count = 0) const;

  // Minimal intersected voxels along the ray, sorted by entry, overlaps
  // clipped, segments shorter than 1e-12 dropped. Pre: render_depth within
  // the render band.
  std::vector<RaySegment> traverse_ray(const Ray& ray, int render_depth) const;

 private:
  std::vector<KdNode> nodes_;
  std::vector<uint32_t> perm_;
  std::vector<uint32_t> inv_perm_;      // point index -> slot in perm_
  std::vector<Vec3> sorted_positions_;  // positions permuted; contiguous per subtree
  std::vector<std::vector<int32_t>> layers_;
  int max_node_depth_ = 0;
  int band_lo_ = 0, band_hi_ = 0, grow_depth_ = 0;
  double pad_ratio_ = 0.0, pad_floor_ = 0.0;

  struct HeapEntry {
    double sqd;
    uint32_t idx;
  };
  struct KnnHeap;
  int32_t build_node(const std::vector<Vec3>& positions, uint32_t begin, uint32_t end, int depth,
                     int max_depth);
  void knn_search(int32_t node, const Vec3& q, KnnHeap& heap) const;
  void traverse_node(int32_t node, const Ray& ray, int render_depth,
                     std::vector<RaySegment>& out) const;
};

inline double sq_distance_point_aabb(const Vec3& q, const Aabb& b) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    double d = 0.0;
    if (q[a] < b.min[a]) d = b.min[a] - q[a];
    else if (q[a] > b.max[a]) d = q[a] - b.max[a];
    s += d * d;
  }
  return s;
}

}  // namespace kdvr
