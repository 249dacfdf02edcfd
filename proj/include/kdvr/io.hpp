#pragma once

#include "kdvr/editor.hpp"
#include "kdvr/metrics.hpp"

namespace kdvr {

// --- point clouds ----------------------------------------------------------
// PLY vertex schema, all doubles: x y z nx ny nz confidence p0..p10. Both
// ascii and binary_little_endian are written/read; float properties and
// partial schemas (missing normals/confidence/params) are accepted on read.
void write_ply(const IndexedPointCloud& cloud, const std::string& path, bool binary = true);
IndexedPointCloud read_ply(const std::string& path);

// --- images ----------------------------------------------------------------
// 16-bit PNG, sRGB-encoded on write, linearized on read. Alpha is written
// when the image carries it.
void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);
double srgb_encode(double linear);
double srgb_decode(double encoded);

// --- model checkpoints -----------------------------------------------------
// Versioned little-endian binary: cloud, normals, build/render options,
// lighting, optimizer state, redirection frames. The tree is not stored;
// loaders rebuild it on demand.
void save_checkpoint(const SceneModel& model, const std::string& path);
SceneModel load_checkpoint(const std::string& path);

// --- scene/dataset description (json) --------------------------------------

struct ViewConfig {
  std::string name;
  std::string image;  // path relative to the config file
  std::string mask;   // empty: fully supervised
  bool is_test = false;
  Camera camera;
};

struct SceneConfig {
  Vec3 background{0, 0, 0};
  LightingEnv lighting;
  // Absent: callers default to the centroid of the training camera positions.
  std::optional<Vec3> orient_ref;
  std::string cloud;  // optional initial cloud, relative path
  std::vector<ViewConfig> views;
};

SceneConfig read_scene_config(const std::string& path);
void write_scene_config(const SceneConfig& cfg, const std::string& path);
// Loads every view image (and mask) relative to the config's directory.
Dataset load_dataset(const SceneConfig& cfg, const std::string& config_path);

// Optional-field JSON overlay onto `base` (absent fields keep base values).
TrainConfig read_train_config(const std::string& path, const TrainConfig& base);

// --- shape edits -----------------------------------------------------------
// Text, one record per point: "x y z" or "DELETE". '#' starts a comment.
ShapeEdit read_shape_edit(const std::string& path);
void write_shape_edit(const ShapeEdit& edit, const std::string& path);

// --- matchings -------------------------------------------------------------
// Text, one "a b" index pair per line, a covering 0..n-1 exactly once.
std::vector<uint32_t> read_matching(const std::string& path);
void write_matching(const std::vector<uint32_t>& match, const std::string& path);

// --- metric tables ---------------------------------------------------------

struct MetricRow {
  std::string name;
  double psnr = 0, ssim = 0;
};

// Tab-separated "name psnr ssim" rows plus a trailing "mean" row.
void write_metric_table(const std::vector<MetricRow>& rows, const std::string& path);

}  // namespace kdvr
