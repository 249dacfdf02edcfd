#pragma once

#include "kdvr/optimizer.hpp"

namespace kdvr {

// Index-preserving edit: one target per point, either a new position or a
// deletion. Surviving points keep their channels and confidences verbatim.
struct ShapeEdit {
  struct Target {
    bool deleted = false;
    Vec3 q;
  };
  std::vector<Target> targets;

  static ShapeEdit identity(const IndexedPointCloud& cloud);
  size_t deleted_count() const;
};

struct EditResult {
  SceneModel model;
  std::vector<uint32_t> survivors;  // original indices, ascending
};

// Local frame with columns (t1, t2, n) at point j: t1 is the direction to
// neighbor a projected off the normal, t2 = n x t1. Falls back to b when
// p_a - p_j is within about 1e-6 rad of the normal line, and reports ok =
// false when both candidates are degenerate (coincident or parallel).
Mat3 build_local_frame(const std::vector<Vec3>& positions, const std::vector<Vec3>& normals,
                       uint32_t j, uint32_t a, uint32_t b, bool& used_fallback, bool& ok);

// Per-survivor redirection frames F_src * F_edit^T. Frame neighbors are the
// two nearest surviving points in the source cloud; the neighbor the source
// frame settles on is reused verbatim for the edited frame so both frames
// describe the same local patch. Bitwise-equal frame pairs become exact
// identity, and all_identity is set when every pair does.
IstFrameSet compute_ist(const SceneModel& original, const SceneModel& edited,
                        const std::vector<uint32_t>& survivors);

inline Vec3 redirect_view(const Mat3& ist, const Vec3& v) { return normalized(ist * v); }

// Deletions and moves, then rebuild, re-estimated normals (the override
// replaces the orientation reference for edits that move the cloud off it),
// then redirection frames unless with_ist is false.
EditResult apply_edit(const SceneModel& model, const ShapeEdit& edit, bool with_ist = true,
                      const std::optional<Vec3>& orient_ref_override = {});

// Ordinary training with frame gradients on (when the model carries live
// frames) and point-set rounds off.
TrainReport finetune(SceneModel& model, const Dataset& dataset, TrainConfig cfg);

}  // namespace kdvr
