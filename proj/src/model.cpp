#include "kdvr/model.hpp"

namespace kdvr {

namespace {

// Filters rows of a flat per-point array with `stride` entries per point.
void filter_rows(std::vector<double>& a, const std::vector<uint32_t>& keep, size_t stride) {
  if (a.empty()) return;
  std::vector<double> out(keep.size() * stride);
  for (size_t i = 0; i < keep.size(); ++i)
    for (size_t c = 0; c < stride; ++c) out[i * stride + c] = a[keep[i] * stride + c];
  a = std::move(out);
}

}  // namespace

void SceneModel::keep_points(const std::vector<uint32_t>& keep) {
  size_t n = cloud.size();
  for (uint32_t j : keep)
    if (j >= n) throw RangeError("keep_points: index out of range");

  IndexedPointCloud nc;
  nc.has_normals = cloud.has_normals;
  nc.resize(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    uint32_t j = keep[i];
    nc.positions[i] = cloud.positions[j];
    nc.confidences[i] = cloud.confidences[j];
    nc.params[i] = cloud.params[j];
    if (cloud.has_normals) nc.normals[i] = cloud.normals[j];
  }
  cloud = std::move(nc);

  filter_rows(train_state.adam_params.m, keep, kParamChannels);
  filter_rows(train_state.adam_params.v, keep, kParamChannels);
  filter_rows(train_state.adam_log_gamma.m, keep, 1);
  filter_rows(train_state.adam_log_gamma.v, keep, 1);
  filter_rows(train_state.adam_ist.m, keep, 9);
  filter_rows(train_state.adam_ist.v, keep, 9);

  if (ist) {
    std::vector<Mat3> frames(keep.size());
    for (size_t i = 0; i < keep.size(); ++i) frames[i] = ist->ist[keep[i]];
    ist->ist = std::move(frames);
    // Neighbor records index the pre-edit cloud; they are diagnostics only
    // and go stale here.
    ist->nbr_a.clear();
    ist->nbr_b.clear();
    ist->degenerate.clear();
  }
  tree.reset();
}

size_t SceneModel::append_points(size_t count) {
  size_t old = cloud.size();
  cloud.resize(old + count);
  auto extend = [count](std::vector<double>& a, size_t stride) {
    if (!a.empty()) a.resize(a.size() + count * stride, 0.0);
  };
  extend(train_state.adam_params.m, kParamChannels);
  extend(train_state.adam_params.v, kParamChannels);
  extend(train_state.adam_log_gamma.m, 1);
  extend(train_state.adam_log_gamma.v, 1);
  extend(train_state.adam_ist.m, 9);
  extend(train_state.adam_ist.v, 9);
  if (ist) {
    ist->ist.resize(old + count, Mat3::identity());
    ist->nbr_a.clear();
    ist->nbr_b.clear();
    ist->degenerate.clear();
  }
  tree.reset();
  return old;
}

std::vector<RayRef> enumerate_rays(const Dataset& ds, bool test) {
  std::vector<RayRef> out;
  for (size_t vi = 0; vi < ds.views.size(); ++vi) {
    const View& v = ds.views[vi];
    if (v.is_test != test) continue;
    for (int py = 0; py < v.camera.height; ++py)
      for (int px = 0; px < v.camera.width; ++px) {
        if (v.has_mask() &&
            v.mask.at(px, py, 0) <= 0.5)
          continue;
        out.push_back({static_cast<int32_t>(vi), static_cast<uint16_t>(px),
                       static_cast<uint16_t>(py)});
      }
  }
  return out;
}

}  // namespace kdvr
