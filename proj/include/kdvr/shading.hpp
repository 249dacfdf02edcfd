#pragma once

#include "kdvr/kdtree.hpp"

namespace kdvr {

// Raw appearance channel layout (pre-activation, trained in this space):
//   0      density logit       -> sigma, softplus
//   1..3   diffuse rgb         -> logistic
//   4..6   specular rgb        -> logistic
//   7..9   tint rgb            -> logistic
//   10     roughness           -> shininess = clamp(exp(raw), 1, 128)
enum RawChannel : int {
  kChDensity = 0,
  kChDiffuse = 1,
  kChSpecular = 4,
  kChTint = 7,
  kChRoughness = 10,
};

struct ActivatedAppearance {
  double sigma = 0.0;
  Vec3 diffuse, specular, tint;
  double shininess = 1.0;
};

struct DirectionalLight {
  Vec3 direction;  // unit, surface toward light
  Vec3 color;
};

struct LightingEnv {
  Vec3 ambient;
  std::vector<DirectionalLight> directional;

  LightingEnv rotated(const Mat3& rot) const {
    LightingEnv r = *this;
    for (auto& l : r.directional) l.direction = rot * l.direction;
    return r;
  }
};

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ActivatedAppearance activate(const ParamVector& raw);
// d(loss)/d(raw) given d(loss)/d(activated). d_act.shininess rides along in
// d_shin. Clamped shininess has zero gradient outside (1, 128).
ParamVector activate_backward(const ParamVector& raw, const ActivatedAppearance& act,
                              const Vec3& d_diffuse, const Vec3& d_specular, const Vec3& d_tint,
                              double d_sigma, double d_shin);

// color = diffuse*(ambient + sum_L c_L max(0, n.dir_L))
//       + tint*specular*sum_L c_L max(0, reflect.dir_L)^shininess,
// reflect = 2(n.v)n - v. All vectors unit; colors linear.
Vec3 phong_color(const ActivatedAppearance& app, const Vec3& normal, const Vec3& view_dir,
                 const LightingEnv& lights);

// Reverse mode wrt the activated appearance; the normal is treated as a
// constant. If d_view is non-null the view-direction gradient is produced
// too (needed when the view ran through a trained redirect).
void phong_backward(const ActivatedAppearance& app, const Vec3& normal, const Vec3& view_dir,
                    const LightingEnv& lights, const Vec3& d_color, Vec3& d_diffuse,
                    Vec3& d_specular, Vec3& d_tint, double& d_shin, Vec3* d_view);

// PCA plane normals over the K_n nearest neighbors (self included), oriented
// so normal.(orient_ref - p) >= 0; exact ties pick positive z, then y, then
// x. K_n is clamped to |P|. Returns indices of degenerate neighborhoods
// (collinear or coincident) that received the documented fallback normal.
std::vector<uint32_t> estimate_normals(IndexedPointCloud& cloud, const KdVoxelTree& tree,
                                       int K_n, const Vec3& orient_ref);
// Convenience: builds a temporary tree.
std::vector<uint32_t> estimate_normals(IndexedPointCloud& cloud, int K_n, const Vec3& orient_ref);

}  // namespace kdvr
