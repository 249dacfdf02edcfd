#pragma once

#include "kdvr/model.hpp"

namespace kdvr {

// Quadrature weights for the mean of a function over a segment, sampled at s
// equispaced points including both endpoints. Exact for cubics; weights sum
// to 1. s == 2 falls back to the trapezoid rule, s == 3 to Simpson.
std::vector<double> spline_quadrature_weights(int s);

struct InterpolationResult {
  ParamVector feature;
  std::vector<uint32_t> indices;
  std::vector<double> weights;  // convex; parallel to indices
  bool exact_hit = false;
};

// Confidence-over-squared-distance interpolation of the raw channel vectors
// of the K nearest points. A query within 1e-18 squared distance of a point
// collapses to that point's channels.
InterpolationResult interpolate_feature(const IndexedPointCloud& cloud,
                                        const KdVoxelTree& tree, const Vec3& q,
                                        int K);

// Modified Gram-Schmidt over columns, with deterministic fallbacks for rank
// deficient input. Keeps the handedness of well conditioned input.
Mat3 orthonormalize_columns(const Mat3& m);
// Reverse mode of the above: d(loss)/d(m) given d(loss)/d(output), replaying
// the forward branches on the same m. Fallback columns pass no gradient.
Mat3 orthonormalize_columns_backward(const Mat3& m, const Mat3& d_out);

// --- ray evaluation tape ---------------------------------------------------
// Everything the backward pass needs to replay one ray without re-traversal.

struct SampleRecord {
  uint32_t nbr_begin = 0;  // into RayTape::nbr_idx / nbr_w
  uint32_t nbr_count = 0;
  bool exact_hit = false;
};

struct SegmentRecord {
  RaySegment seg;
  int s = 0;                 // samples used
  uint32_t sample_begin = 0; // into RayTape::samples
  ParamVector feature{};     // quadrature-averaged raw channels
  ActivatedAppearance appearance;
  Vec3 normal;               // unit, segment-averaged (treated as constant by gradients)
  Mat3 ist_avg;              // pre-orthonormalization frame average
  Mat3 ist;                  // orthonormalized
  bool use_ist = false;
  Vec3 view;                 // effective view direction fed to shading
  Vec3 color;
  double delta = 0, alpha = 0, tau = 0, trans = 0;  // trans = exp(-delta*sigma)
  double orient_hinge = 0;   // max(0, n . ray_dir)
};

struct RayTape {
  std::vector<SegmentRecord> segments;
  std::vector<SampleRecord> samples;
  std::vector<uint32_t> nbr_idx;
  std::vector<double> nbr_w;
  Vec3 color;          // accumulated in-band radiance, before background
  double tau_out = 1;  // residual transmittance

  void reset() {
    segments.clear();
    samples.clear();
    nbr_idx.clear();
    nbr_w.clear();
    color = Vec3{0, 0, 0};
    tau_out = 1;
  }
};

// Overrides the per-segment normals and redirection frames of a repeated
// evaluation, so finite differences can probe the smooth part of the
// pipeline in isolation. Entries pair up with tape segments by order.
struct ShadingFreeze {
  std::vector<Vec3> normals;
  std::vector<Mat3> ists;
};

void eval_ray(const SceneModel& model, const Ray& ray,
              const RenderOptions& opts, RayTape& tape,
              const ShadingFreeze* freeze = nullptr);

// --- public rendering ------------------------------------------------------

struct SegmentDiag {
  double l, r, sigma, alpha, tau;
  int node, depth;
  Vec3 color, normal;
};

struct RenderResult {
  Vec3 color;              // pre-background radiance
  double transmittance;    // background weight
  std::vector<SegmentDiag> segments;  // filled when opts.debug

  Vec3 composite(const Vec3& background) const {
    return color + background * transmittance;
  }
};

RenderResult render_ray(const SceneModel& model, const Ray& ray,
                        const RenderOptions& opts);

Image render_image(const SceneModel& model, const Camera& camera,
                   const RenderOptions& opts);

// Splat-style preview: projects points, sorts per pixel by depth, and
// composites each with a fixed thickness equal to the cloud's mean
// nearest-neighbor spacing. No interpolation, no quadrature.
Image plot_points(const SceneModel& model, const Camera& camera,
                  const RenderOptions& opts);

}  // namespace kdvr
