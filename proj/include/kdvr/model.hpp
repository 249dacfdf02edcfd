#pragma once

#include <optional>

#include "kdvr/shading.hpp"

namespace kdvr {

struct RenderOptions {
  int knn = 32;
  // Integration sample counts by layer depth measured from the band bottom
  // (entry 0 = deepest render layer); the last entry serves the grow layer.
  std::vector<int> samples_per_layer = {8, 11, 16, 22, 22};
  Vec3 background{0, 0, 0};
  int render_depth = -1;  // -1: deepest band layer
  bool ist_enabled = true;
  bool debug = false;  // keep per-segment diagnostics in RenderResult
  int workers = 1;
};

// Per-point view-redirection frames produced by shape edits. all_identity is
// set when every source frame bitwise matches its edited counterpart, in
// which case rendering skips the redirect so an identity edit is a true
// no-op.
struct IstFrameSet {
  std::vector<Mat3> ist;
  std::vector<uint32_t> nbr_a, nbr_b;   // frame neighbors (edited-cloud indices)
  std::vector<uint32_t> degenerate;     // identity-fallback points
  bool all_identity = false;
};

struct AdamState {
  std::vector<double> m, v;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

struct TrainingState {
  uint64_t step = 0;
  uint32_t epoch = 0;
  AdamState adam_params;     // kParamChannels per point
  AdamState adam_log_gamma;  // 1 per point
  AdamState adam_ist;        // 9 per point, active only while fine-tuning IST
  double best_eval = -1.0;   // < 0: none yet
  uint32_t plateau = 0;
  double initial_loss = -1.0;
  uint32_t diverged_epochs = 0;
};

struct SceneModel {
  IndexedPointCloud cloud;
  std::optional<KdVoxelTree> tree;
  KdBuildOptions build_opts;
  LightingEnv lighting;
  Vec3 orient_ref;
  int normal_k = 16;
  RenderOptions render;
  TrainingState train_state;
  std::optional<IstFrameSet> ist;

  void rebuild_tree() { tree = KdVoxelTree::build(cloud, build_opts); }
  void refresh_normals() {
    if (!tree) rebuild_tree();
    estimate_normals(cloud, *tree, normal_k, orient_ref);
  }
  const KdVoxelTree& tree_ref() const {
    if (!tree) throw ContractError("scene model: tree not built");
    return *tree;
  }
  // Moment/IST arrays must stay parallel to the cloud across point-set edits.
  void keep_points(const std::vector<uint32_t>& keep);
  size_t append_points(size_t count);
};

struct View {
  std::string name;
  Camera camera;
  Image image;
  Image mask;  // optional; nonempty means supervised rays are mask > 0.5
  bool is_test = false;

  bool has_mask() const { return !mask.rgb.empty(); }
};

struct Dataset {
  std::vector<View> views;

  std::vector<int> split(bool test) const {
    std::vector<int> out;
    for (size_t i = 0; i < views.size(); ++i)
      if (views[i].is_test == test) out.push_back(static_cast<int>(i));
    return out;
  }
};

// One supervised ray address.
struct RayRef {
  int32_t view;
  uint16_t px, py;
};

std::vector<RayRef> enumerate_rays(const Dataset& ds, bool test);

}  // namespace kdvr
