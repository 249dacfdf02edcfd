#pragma once

#include "kdvr/renderer.hpp"

namespace kdvr {

struct CloudOpsConfig {
  double prune_threshold = 0.1;    // drop points with gamma below this
  int denoise_k = 64;
  double denoise_std_ratio = 2.0;  // mean + ratio * std cutoff on K-NN distance
  bool grow_enabled = true;
  double grow_confidence = 0.5;    // gamma assigned to grown points
};

struct CloudOpsReport {
  size_t grown = 0, pruned = 0, outliers = 0;
  size_t points_before = 0, points_after = 0;
};

// Mean K-NN distance per point (self excluded); returns indices whose mean
// exceeds population mean + std_ratio * std, ascending.
std::vector<uint32_t> statistical_outlier_indices(const IndexedPointCloud& cloud,
                                                  const KdVoxelTree& tree, int K,
                                                  double std_ratio);

// Point-set editors. Each returns the removed (original) indices ascending
// and keeps optimizer moments, redirection frames, and the stale-tree flag
// in sync through SceneModel::keep_points.
std::vector<uint32_t> prune_low_confidence(SceneModel& model, double threshold);
std::vector<uint32_t> remove_statistical_outliers(SceneModel& model, int K,
                                                  double std_ratio);

// Ray-driven densification: walks supervised rays through the root region,
// drops candidates near existing points, ranks ray candidates by current
// pixel loss, thins them to the grow layer's resolution, and appends the
// survivors with interpolated channels. Leaves the tree stale.
size_t grow_points(SceneModel& model, const Dataset& dataset, const CloudOpsConfig& cfg);

// grow, prune, denoise, rebuild, re-estimate normals.
CloudOpsReport optimization_round(SceneModel& model, const Dataset& dataset,
                                  const CloudOpsConfig& cfg);

}  // namespace kdvr
