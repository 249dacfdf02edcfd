#include "kdvr/cloudops.hpp"

#include <algorithm>

namespace kdvr {

namespace {

// Ray overlap intervals with one tree layer's padded boxes. Leaves shallower
// than the target stand in for themselves (tiny clouds only).
void collect_layer_hits(const KdVoxelTree& tree, int32_t node, const Ray& ray,
                        int target_depth, std::vector<RayHitInterval>& out) {
  const KdNode& nd = tree.nodes()[node];
  auto hit = ray_aabb_intersect(ray, nd.padded_box);
  if (!hit) return;
  if (nd.depth == target_depth || nd.leaf()) {
    out.push_back(*hit);
    return;
  }
  collect_layer_hits(tree, nd.left, ray, target_depth, out);
  collect_layer_hits(tree, nd.right, ray, target_depth, out);
}

struct GrowCandidate {
  Vec3 pos;
  double priority;  // pixel loss of the spawning ray
  uint32_t ray_id;
};

// Spatial thinning: bisect the cell at its midpoint on the widest axis
// (ties x, then y, then z) until cells reach the target edge, then keep one
// winner per cell by (priority desc, ray_id asc).
void thin_candidates(const std::vector<GrowCandidate>& cands, std::vector<uint32_t>& ids,
                     const Aabb& cell, double target_edge, std::vector<uint32_t>& out) {
  if (ids.empty()) return;
  if (ids.size() == 1 || cell.mean_edge() <= target_edge) {
    uint32_t best = ids[0];
    for (uint32_t id : ids) {
      if (cands[id].priority > cands[best].priority ||
          (cands[id].priority == cands[best].priority &&
           cands[id].ray_id < cands[best].ray_id))
        best = id;
    }
    out.push_back(best);
    return;
  }
  Vec3 ext = cell.extents();
  int axis = 0;
  if (ext.y > ext[axis]) axis = 1;
  if (ext.z > ext[axis]) axis = 2;
  double mid = 0.5 * (cell.min[axis] + cell.max[axis]);
  std::vector<uint32_t> left, right;
  for (uint32_t id : ids) {
    if (cands[id].pos[axis] < mid)
      left.push_back(id);
    else
      right.push_back(id);
  }
  Aabb lc = cell, rc = cell;
  lc.max[axis] = mid;
  rc.min[axis] = mid;
  thin_candidates(cands, left, lc, target_edge, out);
  thin_candidates(cands, right, rc, target_edge, out);
}

}  // namespace

std::vector<uint32_t> statistical_outlier_indices(const IndexedPointCloud& cloud,
                                                  const KdVoxelTree& tree, int K,
                                                  double std_ratio) {
  size_t n = cloud.size();
  if (n <= 2 || K < 1) return {};
  int kq = static_cast<int>(std::min<size_t>(static_cast<size_t>(K) + 1, n));

  std::vector<double> mean_dist(n, 0.0);
  std::vector<uint32_t> idx(kq);
  std::vector<double> sqd(kq);
  for (size_t j = 0; j < n; ++j) {
    tree.knn_into(cloud.positions[j], kq, idx.data(), sqd.data());
    double s = 0.0;
    int taken = 0;
    for (int a = 0; a < kq && taken < K; ++a) {
      if (idx[a] == j) continue;  // self; duplicates of other indices count
      s += std::sqrt(sqd[a]);
      ++taken;
    }
    mean_dist[j] = taken > 0 ? s / taken : 0.0;
  }

  double mu = 0.0;
  for (double d : mean_dist) mu += d;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double d : mean_dist) var += (d - mu) * (d - mu);
  double cutoff = mu + std_ratio * std::sqrt(var / static_cast<double>(n));

  std::vector<uint32_t> removed;
  for (size_t j = 0; j < n; ++j)
    if (mean_dist[j] > cutoff) removed.push_back(static_cast<uint32_t>(j));
  return removed;
}

std::vector<uint32_t> prune_low_confidence(SceneModel& model, double threshold) {
  size_t n = model.cloud.size();
  std::vector<uint32_t> keep, removed;
  for (size_t j = 0; j < n; ++j) {
    if (model.cloud.confidences[j] < threshold)
      removed.push_back(static_cast<uint32_t>(j));
    else
      keep.push_back(static_cast<uint32_t>(j));
  }
  if (removed.empty()) return removed;
  if (keep.size() < 2)
    throw ContractError("prune: would leave " + std::to_string(keep.size()) +
                        " points; threshold " + std::to_string(threshold) +
                        " removes nearly the whole cloud");
  model.keep_points(keep);
  return removed;
}

std::vector<uint32_t> remove_statistical_outliers(SceneModel& model, int K,
                                                  double std_ratio) {
  if (!model.tree) model.rebuild_tree();
  std::vector<uint32_t> removed =
      statistical_outlier_indices(model.cloud, *model.tree, K, std_ratio);
  if (removed.empty()) return removed;
  size_t n = model.cloud.size();
  std::vector<uint32_t> keep;
  keep.reserve(n - removed.size());
  size_t r = 0;
  for (size_t j = 0; j < n; ++j) {
    if (r < removed.size() && removed[r] == j) {
      ++r;
      continue;
    }
    keep.push_back(static_cast<uint32_t>(j));
  }
  if (keep.size() < 2)
    throw ContractError("outlier removal: would leave fewer than 2 points");
  model.keep_points(keep);
  return removed;
}

size_t grow_points(SceneModel& model, const Dataset& dataset, const CloudOpsConfig& cfg) {
  if (!model.tree) model.rebuild_tree();
  const KdVoxelTree& tree = *model.tree;
  if (!model.cloud.has_normals)
    throw ContractError("grow: cloud has no normals");

  int grow_depth = tree.grow_depth();
  double grow_edge = tree.mean_padded_edge(grow_depth);
  double spacing = grow_edge / 2.0;
  double far_sq = grow_edge * grow_edge;  // candidates must clear this gap

  RenderOptions opts = model.render;
  opts.debug = false;
  std::vector<RayRef> rays = enumerate_rays(dataset, false);

  std::vector<GrowCandidate> cands;
  RayTape tape;
  std::vector<RayHitInterval> hits;
  uint32_t warm = 0;
  bool have_warm = false;
  for (uint32_t ray_id = 0; ray_id < rays.size(); ++ray_id) {
    const RayRef& rr = rays[ray_id];
    const View& view = dataset.views[rr.view];
    Ray ray = camera_ray(view.camera, rr.px, rr.py);

    hits.clear();
    collect_layer_hits(tree, 0, ray, grow_depth, hits);
    if (hits.empty()) continue;
    std::sort(hits.begin(), hits.end(),
              [](const RayHitInterval& a, const RayHitInterval& b) {
                return a.t_near != b.t_near ? a.t_near < b.t_near : a.t_far < b.t_far;
              });

    double best_sigma = -1.0;
    Vec3 best_pos;
    for (const RayHitInterval& h : hits) {
      for (double t = h.t_near; t <= h.t_far; t += spacing) {
        Vec3 q = ray.origin + ray.direction * t;
        uint32_t nn_idx;
        double nn_sqd;
        tree.knn_into(q, 1, &nn_idx, &nn_sqd, have_warm ? &warm : nullptr,
                      have_warm ? 1 : 0);
        warm = nn_idx;
        have_warm = true;
        if (nn_sqd <= far_sq) continue;
        InterpolationResult f = interpolate_feature(model.cloud, tree, q, opts.knn);
        double sigma = softplus(f.feature[kChDensity]);
        if (sigma > best_sigma) {  // ties keep the nearer sample
          best_sigma = sigma;
          best_pos = q;
        }
      }
    }
    if (best_sigma < 0.0) continue;

    Vec3 gt{view.image.at(rr.px, rr.py, 0), view.image.at(rr.px, rr.py, 1),
            view.image.at(rr.px, rr.py, 2)};
    eval_ray(model, ray, opts, tape);
    Vec3 pred = tape.color + opts.background * tape.tau_out;
    cands.push_back({best_pos, norm2(pred - gt), ray_id});
  }
  if (cands.empty()) return 0;

  std::vector<uint32_t> all_ids(cands.size());
  for (uint32_t i = 0; i < cands.size(); ++i) all_ids[i] = i;
  std::vector<uint32_t> chosen;
  thin_candidates(cands, all_ids, tree.root().padded_box, grow_edge, chosen);

  // Interpolate channels before mutating the cloud; the appended points must
  // not feed each other.
  std::vector<ParamVector> feats(chosen.size());
  for (size_t i = 0; i < chosen.size(); ++i)
    feats[i] = interpolate_feature(model.cloud, tree, cands[chosen[i]].pos, opts.knn).feature;

  size_t base = model.append_points(chosen.size());
  for (size_t i = 0; i < chosen.size(); ++i) {
    model.cloud.positions[base + i] = cands[chosen[i]].pos;
    model.cloud.confidences[base + i] = cfg.grow_confidence;
    model.cloud.params[base + i] = feats[i];
    if (model.cloud.has_normals) model.cloud.normals[base + i] = Vec3{0, 0, 1};
  }
  return chosen.size();
}

CloudOpsReport optimization_round(SceneModel& model, const Dataset& dataset,
                                  const CloudOpsConfig& cfg) {
  CloudOpsReport rep;
  rep.points_before = model.cloud.size();
  if (!model.tree) model.rebuild_tree();
  if (!model.cloud.has_normals) model.refresh_normals();

  if (cfg.grow_enabled) rep.grown = grow_points(model, dataset, cfg);
  rep.pruned = prune_low_confidence(model, cfg.prune_threshold).size();
  rep.outliers =
      remove_statistical_outliers(model, cfg.denoise_k, cfg.denoise_std_ratio).size();

  model.rebuild_tree();
  model.refresh_normals();
  rep.points_after = model.cloud.size();
  return rep;
}

}  // namespace kdvr
