#include "kdvr/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace kdvr {

namespace {
constexpr double kMinSegmentLength = 1e-12;
constexpr uint32_t kKnnBucketSize = 16;
}  // namespace

KdVoxelTree KdVoxelTree::build(const IndexedPointCloud& cloud, const KdBuildOptions& opts) {
  size_t n = cloud.size();
  if (n < 2) throw SizeError("kd build: need at least 2 points, got " + std::to_string(n));
  if (opts.max_depth < 1 || opts.max_depth > 62)
    throw ContractError("kd build: max_depth " + std::to_string(opts.max_depth) + " out of range");
  if (n > (uint64_t(1) << opts.max_depth))
    throw CapacityError("kd build: " + std::to_string(n) + " points exceed capacity 2^" +
                        std::to_string(opts.max_depth));

  KdVoxelTree t;
  t.perm_.resize(n);
  std::iota(t.perm_.begin(), t.perm_.end(), 0u);
  t.pad_ratio_ = opts.pad_ratio;

  Aabb root_raw = Aabb::empty();
  for (const Vec3& p : cloud.positions) root_raw.grow(p);
  t.pad_floor_ = opts.pad_floor < 0.0 ? 1e-4 * root_raw.diagonal() : opts.pad_floor;

  t.nodes_.reserve(2 * n);
  t.build_node(cloud.positions, 0, static_cast<uint32_t>(n), 0, opts.max_depth);

  t.sorted_positions_.resize(n);
  t.inv_perm_.resize(n);
  for (size_t i = 0; i < n; ++i) {
    t.sorted_positions_[i] = cloud.positions[t.perm_[i]];
    t.inv_perm_[t.perm_[i]] = static_cast<uint32_t>(i);
  }

  int max_depth_seen = 0, max_nonleaf = 0;
  for (const KdNode& nd : t.nodes_) {
    max_depth_seen = std::max(max_depth_seen, static_cast<int>(nd.depth));
    if (!nd.leaf()) max_nonleaf = std::max(max_nonleaf, static_cast<int>(nd.depth));
  }
  t.max_node_depth_ = max_depth_seen;
  t.band_hi_ = max_nonleaf;
  t.band_lo_ = std::max(0, max_nonleaf - 3);
  t.grow_depth_ = std::max(0, t.band_lo_ - 1);

  t.layers_.assign(max_depth_seen + 1, {});
  for (size_t i = 0; i < t.nodes_.size(); ++i)
    t.layers_[t.nodes_[i].depth].push_back(static_cast<int32_t>(i));
  return t;
}

int32_t KdVoxelTree::build_node(const std::vector<Vec3>& positions, uint32_t begin, uint32_t end,
                                int depth, int max_depth) {
  int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.emplace_back();
  {
    KdNode& nd = nodes_[id];
    nd.begin = begin;
    nd.end = end;
    nd.depth = depth;
    Aabb raw = Aabb::empty();
    for (uint32_t i = begin; i < end; ++i) raw.grow(positions[perm_[i]]);
    nd.raw_box = raw;
    nd.padded_box = raw.padded(pad_ratio_, pad_floor_);
  }
  if (end - begin <= 1 || depth >= max_depth) return id;

  // Widest raw axis, ties x < y < z; split membership and permutation order
  // are pinned by the (coordinate, index) sort so rebuilds are identical.
  Vec3 ext = nodes_[id].raw_box.extents();
  int axis = 0;
  if (ext.y > ext[axis]) axis = 1;
  if (ext.z > ext[axis]) axis = 2;
  nodes_[id].split_axis = axis;
  std::sort(perm_.begin() + begin, perm_.begin() + end, [&](uint32_t a, uint32_t b) {
    double ca = positions[a][axis], cb = positions[b][axis];
    if (ca != cb) return ca < cb;
    return a < b;
  });
  uint32_t mid = begin + (end - begin + 1) / 2;  // left gets ceil(n/2)
  int32_t l = build_node(positions, begin, mid, depth + 1, max_depth);
  int32_t r = build_node(positions, mid, end, depth + 1, max_depth);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

const std::vector<int32_t>& KdVoxelTree::layer(int depth) const {
  if (depth < 0 || depth > max_node_depth_)
    throw RangeError("layer: depth " + std::to_string(depth) + " outside [0, " +
                     std::to_string(max_node_depth_) + "]");
  return layers_[depth];
}

std::vector<Aabb> KdVoxelTree::layer_boxes(int depth) const {
  const auto& ids = layer(depth);
  std::vector<Aabb> out;
  out.reserve(ids.size());
  for (int32_t id : ids) out.push_back(nodes_[id].padded_box);
  return out;
}

double KdVoxelTree::mean_padded_edge(int depth) const {
  const auto& ids = layer(depth);
  double s = 0.0;
  for (int32_t id : ids) s += nodes_[id].padded_box.mean_edge();
  return s / static_cast<double>(ids.size());
}

// --------------------------------------------------------------------------
// KNN

struct KdVoxelTree::KnnHeap {
  HeapEntry* data;
  int size = 0;
  int cap;

  // Lexicographic (sqd, idx): the root is the current worst candidate.
  static bool worse(const HeapEntry& a, const HeapEntry& b) {
    if (a.sqd != b.sqd) return a.sqd > b.sqd;
    return a.idx > b.idx;
  }
  bool full() const { return size == cap; }
  double bound() const { return data[0].sqd; }

  void offer(double sqd, uint32_t idx) {
    if (size < cap) {
      data[size] = {sqd, idx};
      int i = size++;
      while (i > 0) {
        int p = (i - 1) / 2;
        if (!worse(data[i], data[p])) break;
        std::swap(data[i], data[p]);
        i = p;
      }
      return;
    }
    HeapEntry cand{sqd, idx};
    if (!worse(data[0], cand)) return;  // not better than current worst
    data[0] = cand;
    int i = 0;
    for (;;) {
      int c = 2 * i + 1;
      if (c >= size) break;
      if (c + 1 < size && worse(data[c + 1], data[c])) ++c;
      if (!worse(data[c], data[i])) break;
      std::swap(data[i], data[c]);
      i = c;
    }
  }
};

void KdVoxelTree::knn_search(int32_t node, const Vec3& q, KnnHeap& heap) const {
  const KdNode& nd = nodes_[node];
  if (nd.leaf() || nd.count() <= kKnnBucketSize) {
    for (uint32_t i = nd.begin; i < nd.end; ++i) {
      const Vec3 d = sorted_positions_[i] - q;
      heap.offer(dot(d, d), perm_[i]);
    }
    return;
  }
  double dl = sq_distance_point_aabb(q, nodes_[nd.left].raw_box);
  double dr = sq_distance_point_aabb(q, nodes_[nd.right].raw_box);
  int32_t near = nd.left, far = nd.right;
  double dnear = dl, dfar = dr;
  if (dr < dl) {
    near = nd.right;
    far = nd.left;
    dnear = dr;
    dfar = dl;
  }
  // Descend on equality with the bound: an equal-distance point with a
  // smaller index can still displace the current worst.
  if (!heap.full() || dnear <= heap.bound()) knn_search(near, q, heap);
  if (!heap.full() || dfar <= heap.bound()) knn_search(far, q, heap);
}

void KdVoxelTree::knn_into(const Vec3& q, int K, uint32_t* out_idx, double* out_sqd,
                           const uint32_t* warm, int warm_count) const {
  if (K < 1 || static_cast<size_t>(K) > point_count())
    throw ContractError("knn: K = " + std::to_string(K) + " outside [1, " +
                        std::to_string(point_count()) + "]");
  // Stack buffer covers every K used in practice; heap-allocate beyond it.
  HeapEntry local[64];
  std::vector<HeapEntry> spill;
  KnnHeap heap{local, 0, K};
  if (K > 64) {
    spill.resize(K);
    heap.data = spill.data();
  }
  for (int i = 0; i < warm_count; ++i) {
    // Warm entries are point indices of genuine candidates; offering them
    // first only tightens the prune bound, never changes the result set.
    const Vec3 d = sorted_positions_[inv_perm_[warm[i]]] - q;
    heap.offer(dot(d, d), warm[i]);
  }
  knn_search(0, q, heap);
  for (int i = heap.size - 1; i >= 0; --i) {
    out_idx[i] = heap.data[0].idx;
    out_sqd[i] = heap.data[0].sqd;
    heap.data[0] = heap.data[--heap.size];
    int j = 0;
    for (;;) {
      int c = 2 * j + 1;
      if (c >= heap.size) break;
      if (c + 1 < heap.size && KnnHeap::worse(heap.data[c + 1], heap.data[c])) ++c;
      if (!KnnHeap::worse(heap.data[c], heap.data[j])) break;
      std::swap(heap.data[j], heap.data[c]);
      j = c;
    }
  }
}

KnnResult KdVoxelTree::knn_query(const Vec3& q, int K) const {
  KnnResult r;
  r.indices.resize(K);
  r.sq_distances.resize(K);
  knn_into(q, K, r.indices.data(), r.sq_distances.data());
  return r;
}

// --------------------------------------------------------------------------
// Traversal

void KdVoxelTree::traverse_node(int32_t node, const Ray& ray, int render_depth,
                                std::vector<RaySegment>& out) const {
  // Caller guarantees the padded box of `node` is hit.
  const KdNode& nd = nodes_[node];
  if (nd.depth == render_depth) {
    auto hit = ray_aabb_intersect(ray, nd.padded_box);
    out.push_back({hit->t_near, hit->t_far, node, nd.depth});
    return;
  }
  std::optional<RayHitInterval> hl, hr;
  if (!nd.leaf()) {
    hl = ray_aabb_intersect(ray, nodes_[nd.left].padded_box);
    hr = ray_aabb_intersect(ray, nodes_[nd.right].padded_box);
  }
  if (!hl && !hr) {
    // Minimal intersected voxel: within the band this node stands in for its
    // missed children; above the band the ray is in empty space.
    if (nd.depth >= band_lo_) {
      auto hit = ray_aabb_intersect(ray, nd.padded_box);
      out.push_back({hit->t_near, hit->t_far, node, nd.depth});
    }
    return;
  }
  // Children ordered by entry parameter; ties keep the left child first.
  if (hl && hr && hr->t_near < hl->t_near) {
    traverse_node(nd.right, ray, render_depth, out);
    traverse_node(nd.left, ray, render_depth, out);
    return;
  }
  if (hl) traverse_node(nd.left, ray, render_depth, out);
  if (hr) traverse_node(nd.right, ray, render_depth, out);
}

std::vector<RaySegment> KdVoxelTree::traverse_ray(const Ray& ray, int render_depth) const {
  if (render_depth < band_lo_ || render_depth > band_hi_)
    throw ContractError("traverse_ray: render depth " + std::to_string(render_depth) +
                        " outside band [" + std::to_string(band_lo_) + ", " +
                        std::to_string(band_hi_) + "]");
  std::vector<RaySegment> segs;
  if (!ray_aabb_intersect(ray, nodes_[0].padded_box)) return segs;
  traverse_node(0, ray, render_depth, segs);

  std::sort(segs.begin(), segs.end(), [](const RaySegment& a, const RaySegment& b) {
    if (a.l != b.l) return a.l < b.l;
    if (a.r != b.r) return a.r < b.r;
    return a.node < b.node;
  });
  std::vector<RaySegment> out;
  out.reserve(segs.size());
  double prev_r = 0.0;
  for (RaySegment s : segs) {
    if (!out.empty()) s.l = std::max(s.l, prev_r);
    if (s.r - s.l < kMinSegmentLength) continue;
    prev_r = s.r;
    out.push_back(s);
  }
  return out;
}

}  // namespace kdvr
