#include "kdvr/morphing.hpp"

#include <algorithm>

#include "kdvr/renderer.hpp"

namespace kdvr {

namespace {

void match_rec(const IndexedPointCloud& a, const IndexedPointCloud& b,
               std::vector<uint32_t>& ia, std::vector<uint32_t>& ib,
               std::vector<uint32_t>& match) {
  if (ia.size() == 1) {
    match[ia[0]] = ib[0];
    return;
  }
  Aabb box = Aabb::empty();
  for (uint32_t i : ia) box.grow(a.positions[i]);
  for (uint32_t i : ib) box.grow(b.positions[i]);
  Vec3 ext = box.extents();
  int axis = 0;
  if (ext.y > ext[axis]) axis = 1;
  if (ext.z > ext[axis]) axis = 2;

  auto order = [axis](const IndexedPointCloud& c) {
    return [&c, axis](uint32_t x, uint32_t y) {
      double cx = c.positions[x][axis], cy = c.positions[y][axis];
      if (cx != cy) return cx < cy;
      return x < y;
    };
  };
  std::sort(ia.begin(), ia.end(), order(a));
  std::sort(ib.begin(), ib.end(), order(b));

  size_t mid = (ia.size() + 1) / 2;  // left gets ceil(n/2), same on both sides
  std::vector<uint32_t> la(ia.begin(), ia.begin() + mid), ra(ia.begin() + mid, ia.end());
  std::vector<uint32_t> lb(ib.begin(), ib.begin() + mid), rb(ib.begin() + mid, ib.end());
  match_rec(a, b, la, lb, match);
  match_rec(a, b, ra, rb, match);
}

}  // namespace

std::vector<uint32_t> match_clouds(const IndexedPointCloud& a, const IndexedPointCloud& b) {
  if (a.size() != b.size())
    throw SizeError("match_clouds: sizes differ (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  if (a.size() == 0) throw SizeError("match_clouds: empty clouds");
  std::vector<uint32_t> ia(a.size()), ib(b.size());
  for (uint32_t i = 0; i < a.size(); ++i) ia[i] = ib[i] = i;
  std::vector<uint32_t> match(a.size());
  match_rec(a, b, ia, ib, match);
  return match;
}

IndexedPointCloud interpolate_cloud(const IndexedPointCloud& a, const IndexedPointCloud& b,
                                    const std::vector<uint32_t>& match, double t) {
  if (match.size() != a.size() || a.size() != b.size())
    throw SizeError("interpolate_cloud: matching does not cover both clouds");

  IndexedPointCloud out;
  // The endpoints must reproduce the inputs bitwise, so they bypass the
  // blend arithmetic entirely (t = 1 also drops the reindexing).
  if (t == 0.0) {
    out = a;
  } else if (t == 1.0) {
    out = b;
  } else {
    out.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
      uint32_t j = match[i];
      Vec3 pa = a.positions[i], pb = b.positions[j];
      out.positions[i] = pa + t * (pb - pa);
      out.confidences[i] =
          a.confidences[i] *
          std::exp(t * (std::log(b.confidences[j]) - std::log(a.confidences[i])));
      for (int c = 0; c < kParamChannels; ++c)
        out.params[i][c] = a.params[i][c] + t * (b.params[j][c] - a.params[i][c]);
    }
  }
  out.normals.clear();
  out.has_normals = false;
  return out;
}

SceneModel blend_models(const SceneModel& a, const SceneModel& b,
                        const std::vector<uint32_t>& match, double t) {
  SceneModel m;
  m.cloud = interpolate_cloud(a.cloud, b.cloud, match, t);
  m.build_opts = a.build_opts;
  m.lighting = a.lighting;
  m.orient_ref = a.orient_ref + t * (b.orient_ref - a.orient_ref);
  if (t == 0.0) m.orient_ref = a.orient_ref;
  if (t == 1.0) m.orient_ref = b.orient_ref;
  m.normal_k = a.normal_k;
  m.render = a.render;
  m.rebuild_tree();
  m.refresh_normals();
  return m;
}

std::vector<Image> render_morph_sequence(const SceneModel& a, const SceneModel& b,
                                         const std::vector<uint32_t>& match, int steps,
                                         const Camera& camera) {
  if (steps < 2) throw ContractError("render_morph_sequence: need at least 2 steps");
  std::vector<Image> frames;
  frames.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(steps - 1);
    SceneModel m = blend_models(a, b, match, t);
    frames.push_back(render_image(m, camera, m.render));
  }
  return frames;
}

}  // namespace kdvr
