#pragma once

#include "kdvr/io.hpp"

namespace kdvr {

// Analytic test scenes: closed-form primitives, exact first-hit renders, and
// index-aligned deformation programs. Everything here is deterministic in the
// spec's seed, so generated datasets are byte-stable.

struct SynthMaterial {
  Vec3 diffuse{0.5, 0.5, 0.5};
  Vec3 specular{0.2, 0.2, 0.2};
  Vec3 tint{0.9, 0.9, 0.9};
  double shininess = 16.0;     // clamped to [1, 128] like the activation
  double density_logit = 40.0;  // raw density channel for sampled clouds
};

// Surface kept where dot(normal, p_local) <= offset; the rest is removed,
// leaving an open surface that rays pass through.
struct SynthClip {
  Vec3 normal{0, 0, 1};
  double offset = 0.0;
};

struct SynthPrimitive {
  enum class Kind { kSphere, kBox };

  Kind kind = Kind::kSphere;
  double radius = 1.0;        // kSphere
  Vec3 half_extent{1, 1, 1};  // kBox
  RigidTransform pose;        // local -> world
  SynthMaterial material;
  int part = 0;  // deformation programs address primitives by part id
  std::vector<SynthClip> clips;
};

struct SynthView {
  std::string name;
  Camera camera;
  bool is_test = false;
};

struct DeformProgram {
  enum class Kind { kNone, kRigid, kArticulation, kCut };

  Kind kind = Kind::kNone;
  // kRigid: whole scene; lights and orient_ref co-transform.
  RigidTransform rigid;
  // kArticulation: rotate every primitive of `part` about pivot.
  int part = 0;
  Vec3 pivot;
  Vec3 axis{0, 0, 1};
  double angle = 0.0;  // radians
  // kCut: delete where dot(cut_normal, p) > cut_offset (world space).
  Vec3 cut_normal{0, 0, 1};
  double cut_offset = 0.0;
};

struct SynthSceneSpec {
  std::vector<SynthPrimitive> primitives;
  LightingEnv lighting;
  Vec3 background{0, 0, 0};
  Vec3 orient_ref{0, 0, 0};
  std::vector<SynthView> views;
  size_t samples = 8192;
  double noise = 0.0;
  uint64_t seed = 1;
  DeformProgram deform;
};

// Cameras on a horizontal circle around `target`, all aimed at it. Every
// test_every-th view (k % test_every == test_every - 1) is a test view;
// test_every <= 0 marks none.
std::vector<SynthView> ring_views(const Vec3& target, double radius, double height, int count,
                                  int width, int height_px, double fov_deg, double phase = 0.0,
                                  int test_every = 0);

// Camera conjugated by a scene rotation: rot' = R rot, pos' = R pos. Renders
// of a rotated scene from `cam` equal renders of the original from
// rotated_camera(cam, R^-1).
Camera rotated_camera(const Camera& cam, const Mat3& rot);

// Exact sign-flip matrix for 180 degrees about coordinate axis 0/1/2. Unlike
// axis_angle(pi) there is no trig roundoff, so oracle equivariance holds
// bitwise.
Mat3 rot180(int axis);

struct OracleHit {
  double t = 0.0;
  Vec3 point;
  Vec3 normal;  // outward unit
  int prim = -1;
  int part = -1;
};

// Nearest analytic surface hit; clipped-away patches are skipped. Exact t
// ties go to the lower primitive index.
std::optional<OracleHit> oracle_trace(const SynthSceneSpec& spec, const Ray& ray);
// Opaque-surface shading: phong at the first hit, background on a miss.
Vec3 oracle_pixel(const SynthSceneSpec& spec, const Ray& ray);
Image oracle_render(const SynthSceneSpec& spec, const Camera& cam);
// Part id of the primary hit per pixel, -1 for background.
std::vector<int> oracle_part_ids(const SynthSceneSpec& spec, const Camera& cam);
// Every view rendered analytically.
Dataset oracle_dataset(const SynthSceneSpec& spec);

// Raw channels matching a material under the shading activations.
ParamVector material_params(const SynthMaterial& m);

struct SampledCloud {
  IndexedPointCloud cloud;  // analytic outward normals, material params, gamma = 1
  std::vector<int> part;    // per point, parallel to the cloud
};

// Area-weighted surface sampling with iid gaussian position jitter of sigma
// spec.noise. Clipped patches are rejected. CapacityError above 2^21 samples.
SampledCloud sample_surface(const SynthSceneSpec& spec);

// The spec's deformation as an index-aligned edit of the sampled cloud.
ShapeEdit deform_edit(const SampledCloud& sc, const DeformProgram& d);

// Scene spec after its deformation program: poses pre-multiplied, the cut
// half-space becomes per-primitive clips, rigid programs co-rotate lights and
// orient_ref. Views and the program itself are kept as-is.
SynthSceneSpec deform_spec(const SynthSceneSpec& spec);

// Named built-in scenes: "sphere" (one sphere) and "sphere_box" (sphere,
// chest box, liftable lid; parts 0/1/2).
SynthSceneSpec synth_preset(const std::string& name);

// JSON spec file (documented key set mirrors the struct field names).
SynthSceneSpec read_synth_spec(const std::string& path);
void write_synth_spec(const SynthSceneSpec& spec, const std::string& path);

}  // namespace kdvr
