#include "kdvr/editor.hpp"

#include <algorithm>

namespace kdvr {

namespace {
// sin of the angle below which the neighbor direction counts as parallel to
// the normal and the frame falls back to its second candidate.
constexpr double kParallelSin = 1e-6;
}  // namespace

ShapeEdit ShapeEdit::identity(const IndexedPointCloud& cloud) {
  ShapeEdit e;
  e.targets.resize(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) e.targets[i].q = cloud.positions[i];
  return e;
}

size_t ShapeEdit::deleted_count() const {
  size_t n = 0;
  for (const Target& t : targets) n += t.deleted ? 1 : 0;
  return n;
}

Mat3 build_local_frame(const std::vector<Vec3>& positions, const std::vector<Vec3>& normals,
                       uint32_t j, uint32_t a, uint32_t b, bool& used_fallback, bool& ok) {
  const Vec3 n = normals[j];
  const uint32_t candidates[2] = {a, b};
  for (int c = 0; c < 2; ++c) {
    if (c == 1 && b == a) break;
    Vec3 d = positions[candidates[c]] - positions[j];
    double dn = norm(d);
    if (dn == 0.0) continue;
    Vec3 t1_raw = d - dot(d, n) * n;
    double tn = norm(t1_raw);
    if (tn <= kParallelSin * dn) continue;
    Vec3 t1 = t1_raw / tn;
    used_fallback = c == 1;
    ok = true;
    return Mat3::from_cols(t1, cross(n, t1), n);
  }
  used_fallback = false;
  ok = false;
  return Mat3::identity();
}

IstFrameSet compute_ist(const SceneModel& original, const SceneModel& edited,
                        const std::vector<uint32_t>& survivors) {
  size_t m = survivors.size();
  if (m != edited.cloud.size())
    throw ContractError("compute_ist: survivor list does not match edited cloud");
  if (m < 2) throw SizeError("compute_ist: need at least 2 survivors");
  if (!original.cloud.has_normals || !edited.cloud.has_normals)
    throw ContractError("compute_ist: both clouds need normals");

  // Survivor-local views of the source cloud; local index i doubles as the
  // edited cloud index.
  IndexedPointCloud src;
  src.has_normals = true;
  src.resize(m);
  for (size_t i = 0; i < m; ++i) {
    src.positions[i] = original.cloud.positions[survivors[i]];
    src.normals[i] = original.cloud.normals[survivors[i]];
    src.confidences[i] = 1.0;
  }
  KdVoxelTree src_tree = KdVoxelTree::build(src, original.build_opts);

  IstFrameSet out;
  out.ist.resize(m);
  out.nbr_a.resize(m);
  out.nbr_b.resize(m);
  out.all_identity = true;

  int kq = static_cast<int>(std::min<size_t>(3, m));
  std::vector<uint32_t> idx(kq);
  std::vector<double> sqd(kq);
  for (uint32_t i = 0; i < m; ++i) {
    src_tree.knn_into(src.positions[i], kq, idx.data(), sqd.data());
    uint32_t a = i, b = i;
    for (int q = 0; q < kq; ++q) {
      if (idx[q] == i) continue;
      if (a == i)
        a = idx[q];
      else if (b == i) {
        b = idx[q];
        break;
      }
    }
    if (a == i) {  // every neighbor entry collapsed onto i; no frame possible
      out.ist[i] = Mat3::identity();
      out.nbr_a[i] = i;
      out.nbr_b[i] = i;
      out.degenerate.push_back(i);
      continue;
    }
    if (b == i) b = a;

    bool fell_back = false, ok_src = false;
    Mat3 f_src = build_local_frame(src.positions, src.normals, i, a, b, fell_back, ok_src);
    if (!ok_src) {
      out.ist[i] = Mat3::identity();
      out.nbr_a[i] = a;
      out.nbr_b[i] = b;
      out.degenerate.push_back(i);
      continue;
    }
    uint32_t chosen = fell_back ? b : a;
    out.nbr_a[i] = chosen;
    out.nbr_b[i] = chosen;

    bool dummy = false, ok_edit = false;
    Mat3 f_edit = build_local_frame(edited.cloud.positions, edited.cloud.normals, i, chosen,
                                    chosen, dummy, ok_edit);
    if (!ok_edit) {
      out.ist[i] = Mat3::identity();
      out.degenerate.push_back(i);
      continue;
    }
    if (f_src == f_edit) {
      out.ist[i] = Mat3::identity();
      continue;
    }
    out.ist[i] = f_src * f_edit.transposed();
    out.all_identity = false;
  }
  if (!out.degenerate.empty()) out.all_identity = false;
  // Degenerate identities are fallbacks, not evidence the edit is a no-op;
  // only a clean sweep of bitwise-equal frames may disable redirection.
  bool any_non_identity = false;
  for (const Mat3& f : out.ist)
    if (!(f == Mat3::identity())) any_non_identity = true;
  out.all_identity = !any_non_identity && out.degenerate.empty();
  return out;
}

EditResult apply_edit(const SceneModel& model, const ShapeEdit& edit, bool with_ist,
                      const std::optional<Vec3>& orient_ref_override) {
  if (edit.targets.size() != model.cloud.size())
    throw SizeError("apply_edit: edit has " + std::to_string(edit.targets.size()) +
                    " targets for " + std::to_string(model.cloud.size()) + " points");
  if (!model.cloud.has_normals)
    throw ContractError("apply_edit: source model has no normals");

  EditResult res;
  for (uint32_t j = 0; j < model.cloud.size(); ++j)
    if (!edit.targets[j].deleted) res.survivors.push_back(j);
  if (res.survivors.size() < 2)
    throw ContractError("apply_edit: fewer than 2 points survive");

  SceneModel& em = res.model;
  em.build_opts = model.build_opts;
  em.lighting = model.lighting;
  em.orient_ref = orient_ref_override.value_or(model.orient_ref);
  em.normal_k = model.normal_k;
  em.render = model.render;

  size_t m = res.survivors.size();
  em.cloud.resize(m);
  for (size_t i = 0; i < m; ++i) {
    uint32_t j = res.survivors[i];
    em.cloud.positions[i] = edit.targets[j].q;
    em.cloud.confidences[i] = model.cloud.confidences[j];
    em.cloud.params[i] = model.cloud.params[j];
  }
  em.cloud.has_normals = false;
  em.rebuild_tree();
  em.refresh_normals();

  if (with_ist) em.ist = compute_ist(model, em, res.survivors);
  return res;
}

TrainReport finetune(SceneModel& model, const Dataset& dataset, TrainConfig cfg) {
  cfg.train_ist = model.ist.has_value() && !model.ist->all_identity;
  cfg.pg_enabled = false;
  return train(model, dataset, cfg);
}

}  // namespace kdvr
