#include "kdvr/renderer.hpp"

#include <algorithm>
#include <map>
#include <mutex>

#include "kdvr/parallel.hpp"

namespace kdvr {

namespace {

constexpr double kExactHitSqDist = 1e-18;
constexpr double kGsTiny = 1e-30;

// Dense LU with partial pivoting; pivot ties keep the smallest row index so
// factorization order is deterministic.
struct DenseLu {
  int n;
  std::vector<double> a;  // row-major, overwritten by factors
  std::vector<int> piv;

  explicit DenseLu(int n_, std::vector<double> a_) : n(n_), a(std::move(a_)), piv(n_) {
    for (int c = 0; c < n; ++c) {
      int p = c;
      for (int r = c + 1; r < n; ++r)
        if (std::abs(a[r * n + c]) > std::abs(a[p * n + c])) p = r;
      piv[c] = p;
      if (p != c)
        for (int k = 0; k < n; ++k) std::swap(a[c * n + k], a[p * n + k]);
      if (a[c * n + c] == 0.0) throw ContractError("quadrature: singular spline system");
      for (int r = c + 1; r < n; ++r) {
        double f = a[r * n + c] / a[c * n + c];
        a[r * n + c] = f;
        for (int k = c + 1; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      }
    }
  }

  void solve(std::vector<double>& b) const {
    for (int c = 0; c < n; ++c) {
      if (piv[c] != c) std::swap(b[c], b[piv[c]]);
      for (int r = c + 1; r < n; ++r) b[r] -= a[r * n + c] * b[c];
    }
    for (int r = n - 1; r >= 0; --r) {
      for (int k = r + 1; k < n; ++k) b[r] -= a[r * n + k] * b[k];
      b[r] /= a[r * n + r];
    }
  }
};

// Integrates the not-a-knot cubic spline through equispaced samples on [0, 1]
// and reads off the per-sample weights: trapezoid part minus the h^3/24
// second-derivative correction, solved once per basis vector.
std::vector<double> compute_spline_weights(int s) {
  if (s == 2) return {0.5, 0.5};
  if (s == 3) return {1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0};

  const int n = s;
  const double h = 1.0 / (s - 1);
  std::vector<double> A(static_cast<size_t>(n) * n, 0.0);
  A[0 * n + 0] = 1.0;
  A[0 * n + 1] = -2.0;
  A[0 * n + 2] = 1.0;
  A[(n - 1) * n + (n - 3)] = 1.0;
  A[(n - 1) * n + (n - 2)] = -2.0;
  A[(n - 1) * n + (n - 1)] = 1.0;
  for (int i = 1; i < n - 1; ++i) {
    A[i * n + i - 1] = h / 6.0;
    A[i * n + i] = 2.0 * h / 3.0;
    A[i * n + i + 1] = h / 6.0;
  }
  DenseLu lu(n, std::move(A));

  std::vector<double> w(n, 0.0);
  for (int i = 0; i + 1 < n; ++i) {
    w[i] += h / 2.0;
    w[i + 1] += h / 2.0;
  }
  std::vector<double> rhs(n);
  for (int k = 0; k < n; ++k) {
    std::fill(rhs.begin(), rhs.end(), 0.0);
    for (int i = 1; i < n - 1; ++i) {
      double y_prev = (i - 1 == k) ? 1.0 : 0.0;
      double y_i = (i == k) ? 1.0 : 0.0;
      double y_next = (i + 1 == k) ? 1.0 : 0.0;
      rhs[i] = (y_next - 2.0 * y_i + y_prev) / h;
    }
    lu.solve(rhs);  // rhs now holds the second derivatives for basis k
    double corr = 0.0;
    for (int i = 0; i + 1 < n; ++i) corr += rhs[i] + rhs[i + 1];
    w[k] -= h * h * h / 24.0 * corr;
  }

  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

const std::vector<double>& cached_spline_weights(int s) {
  static std::mutex mu;
  static std::map<int, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(s);
  if (it == cache.end()) it = cache.emplace(s, compute_spline_weights(s)).first;
  return it->second;  // map entries are never erased or moved
}

Vec3 stable_perpendicular(const Vec3& u) {
  double ax = std::abs(u.x), ay = std::abs(u.y), az = std::abs(u.z);
  Vec3 e = (ax <= ay && ax <= az) ? Vec3{1, 0, 0} : (ay <= az ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
  return normalized(cross(u, e));
}

}  // namespace

std::vector<double> spline_quadrature_weights(int s) {
  if (s < 2) throw ContractError("quadrature: sample count must be >= 2");
  return cached_spline_weights(s);
}

// Shared with the IST fine-tuning step; the backward pass replays these exact
// branches, so the fallback thresholds here are load-bearing.
Mat3 orthonormalize_columns(const Mat3& m) {
  Vec3 a0 = m.col(0), a1 = m.col(1), a2 = m.col(2);
  double n0 = norm(a0);
  Vec3 u0 = n0 > kGsTiny ? a0 / n0 : Vec3{1, 0, 0};
  Vec3 w1 = a1 - dot(u0, a1) * u0;
  double n1 = norm(w1);
  Vec3 u1 = n1 > kGsTiny ? w1 / n1 : stable_perpendicular(u0);
  Vec3 w2 = a2 - dot(u0, a2) * u0 - dot(u1, a2) * u1;
  double n2 = norm(w2);
  Vec3 u2 = n2 > kGsTiny ? w2 / n2 : cross(u0, u1);
  return Mat3::from_cols(u0, u1, u2);
}

// Reverse mode of orthonormalize_columns. Replays the forward branches on
// the same input; fallback columns pass no gradient.
Mat3 orthonormalize_columns_backward(const Mat3& m, const Mat3& d_out) {
  Vec3 a0 = m.col(0), a1 = m.col(1), a2 = m.col(2);
  double n0 = norm(a0);
  bool ok0 = n0 > kGsTiny;
  Vec3 u0 = ok0 ? a0 / n0 : Vec3{1, 0, 0};
  double p1 = dot(u0, a1);
  Vec3 w1 = a1 - p1 * u0;
  double n1 = norm(w1);
  bool ok1 = n1 > kGsTiny;
  Vec3 u1 = ok1 ? w1 / n1 : stable_perpendicular(u0);
  double p2 = dot(u0, a2), q2 = dot(u1, a2);
  Vec3 w2 = a2 - p2 * u0 - q2 * u1;
  double n2 = norm(w2);
  bool ok2 = n2 > kGsTiny;
  Vec3 u2 = ok2 ? w2 / n2 : cross(u0, u1);

  Vec3 du0 = d_out.col(0), du1 = d_out.col(1), du2 = d_out.col(2);
  Vec3 da0, da1, da2;
  if (ok2) {
    Vec3 dw2 = (du2 - u2 * dot(u2, du2)) / n2;
    da2 += dw2;
    du0 -= p2 * dw2;
    du1 -= q2 * dw2;
    double dp2 = -dot(dw2, u0);
    double dq2 = -dot(dw2, u1);
    du0 += dp2 * a2;
    da2 += dp2 * u0;
    du1 += dq2 * a2;
    da2 += dq2 * u1;
  }
  if (ok1) {
    Vec3 dw1 = (du1 - u1 * dot(u1, du1)) / n1;
    da1 += dw1;
    du0 -= p1 * dw1;
    double dp1 = -dot(dw1, u0);
    du0 += dp1 * a1;
    da1 += dp1 * u0;
  }
  if (ok0) da0 = (du0 - u0 * dot(u0, du0)) / n0;
  return Mat3::from_cols(da0, da1, da2);
}

InterpolationResult interpolate_feature(const IndexedPointCloud& cloud,
                                        const KdVoxelTree& tree, const Vec3& q,
                                        int K) {
  if (K < 1) throw ContractError("interpolate_feature: K must be >= 1");
  K = std::min<int>(K, static_cast<int>(tree.point_count()));
  KnnResult nn = tree.knn_query(q, K);

  InterpolationResult out;
  if (nn.sq_distances[0] < kExactHitSqDist) {
    out.exact_hit = true;
    out.indices = {nn.indices[0]};
    out.weights = {1.0};
    out.feature = cloud.params[nn.indices[0]];
    return out;
  }
  out.indices = nn.indices;
  out.weights.resize(nn.indices.size());
  double sum = 0.0;
  for (size_t j = 0; j < nn.indices.size(); ++j) {
    out.weights[j] = cloud.confidences[nn.indices[j]] / nn.sq_distances[j];
    sum += out.weights[j];
  }
  out.feature.fill(0.0);
  for (size_t j = 0; j < nn.indices.size(); ++j) {
    out.weights[j] /= sum;
    const ParamVector& e = cloud.params[nn.indices[j]];
    for (int c = 0; c < kParamChannels; ++c) out.feature[c] += out.weights[j] * e[c];
  }
  return out;
}

void eval_ray(const SceneModel& model, const Ray& ray, const RenderOptions& opts,
              RayTape& tape, const ShadingFreeze* freeze) {
  tape.reset();
  const KdVoxelTree& tree = model.tree_ref();
  if (!model.cloud.has_normals)
    throw ContractError("eval_ray: cloud has no normals");
  if (opts.samples_per_layer.empty())
    throw ContractError("eval_ray: samples_per_layer is empty");

  int render_depth = opts.render_depth < 0 ? tree.band_hi() : opts.render_depth;
  std::vector<RaySegment> segs = tree.traverse_ray(ray, render_depth);
  if (segs.empty()) return;

  int K = std::min<int>(std::max(opts.knn, 1), static_cast<int>(tree.point_count()));
  std::vector<uint32_t> idx(K), warm(K);
  std::vector<double> sqd(K);
  int warm_count = 0;

  const bool use_ist = opts.ist_enabled && model.ist.has_value() && !model.ist->all_identity;
  const Vec3 v_cam = -ray.direction;

  double tau = 1.0;
  tape.segments.reserve(segs.size());
  for (const RaySegment& seg : segs) {
    size_t from_bottom = static_cast<size_t>(tree.band_hi() - seg.depth);
    int s = opts.samples_per_layer[std::min(from_bottom, opts.samples_per_layer.size() - 1)];
    if (s < 2) throw ContractError("eval_ray: samples_per_layer entries must be >= 2");
    const std::vector<double>& qw = cached_spline_weights(s);

    SegmentRecord rec;
    rec.seg = seg;
    rec.s = s;
    rec.sample_begin = static_cast<uint32_t>(tape.samples.size());
    rec.feature.fill(0.0);
    Vec3 n_acc{0, 0, 0};
    Mat3 ist_acc;  // zero

    for (int k = 0; k < s; ++k) {
      double t = seg.l + (seg.r - seg.l) * k / (s - 1);
      Vec3 q = ray.origin + ray.direction * t;
      SampleRecord sr;
      sr.nbr_begin = static_cast<uint32_t>(tape.nbr_idx.size());
      tree.knn_into(q, K, idx.data(), sqd.data(), warm_count ? warm.data() : nullptr,
                    warm_count);
      std::copy(idx.begin(), idx.end(), warm.begin());
      warm_count = K;

      if (sqd[0] < kExactHitSqDist) {
        sr.exact_hit = true;
        sr.nbr_count = 1;
        tape.nbr_idx.push_back(idx[0]);
        tape.nbr_w.push_back(1.0);
        uint32_t j = idx[0];
        for (int c = 0; c < kParamChannels; ++c)
          rec.feature[c] += qw[k] * model.cloud.params[j][c];
        n_acc += qw[k] * model.cloud.normals[j];
        if (use_ist) ist_acc += model.ist->ist[j] * qw[k];
      } else {
        sr.nbr_count = static_cast<uint32_t>(K);
        double sum = 0.0;
        for (int a = 0; a < K; ++a) {
          double ratio = model.cloud.confidences[idx[a]] / sqd[a];
          tape.nbr_w.push_back(ratio);
          tape.nbr_idx.push_back(idx[a]);
          sum += ratio;
        }
        double* kw = tape.nbr_w.data() + sr.nbr_begin;
        for (int a = 0; a < K; ++a) {
          kw[a] /= sum;
          double wk = qw[k] * kw[a];
          uint32_t j = idx[a];
          const ParamVector& e = model.cloud.params[j];
          for (int c = 0; c < kParamChannels; ++c) rec.feature[c] += wk * e[c];
          n_acc += wk * model.cloud.normals[j];
          if (use_ist) ist_acc += model.ist->ist[j] * wk;
        }
      }
      tape.samples.push_back(sr);
    }

    size_t seg_index = tape.segments.size();
    double nn = norm(n_acc);
    rec.normal = nn > 0.0 ? n_acc / nn : -ray.direction;
    rec.use_ist = use_ist;
    if (use_ist) {
      rec.ist_avg = ist_acc;
      rec.ist = orthonormalize_columns(ist_acc);
    } else {
      rec.ist = Mat3::identity();
    }
    if (freeze) {
      rec.normal = freeze->normals.at(seg_index);
      if (use_ist && !freeze->ists.empty()) rec.ist = freeze->ists.at(seg_index);
    }
    rec.view = use_ist ? normalized(rec.ist * v_cam) : v_cam;
    rec.appearance = activate(rec.feature);
    rec.color = phong_color(rec.appearance, rec.normal, rec.view, model.lighting);
    rec.orient_hinge = std::max(0.0, dot(rec.normal, ray.direction));

    rec.delta = seg.r - seg.l;
    rec.trans = std::exp(-rec.delta * rec.appearance.sigma);
    rec.alpha = 1.0 - rec.trans;
    rec.tau = tau;
    tape.color += (tau * rec.alpha) * rec.color;
    tau *= rec.trans;
    tape.segments.push_back(rec);
  }
  tape.tau_out = tau;
}

RenderResult render_ray(const SceneModel& model, const Ray& ray,
                        const RenderOptions& opts) {
  RayTape tape;
  eval_ray(model, ray, opts, tape);
  RenderResult out;
  out.color = tape.color;
  out.transmittance = tape.tau_out;
  if (opts.debug) {
    out.segments.reserve(tape.segments.size());
    for (const SegmentRecord& rec : tape.segments) {
      SegmentDiag d;
      d.l = rec.seg.l;
      d.r = rec.seg.r;
      d.sigma = rec.appearance.sigma;
      d.alpha = rec.alpha;
      d.tau = rec.tau;
      d.node = rec.seg.node;
      d.depth = rec.seg.depth;
      d.color = rec.color;
      d.normal = rec.normal;
      out.segments.push_back(d);
    }
  }
  return out;
}

Image render_image(const SceneModel& model, const Camera& camera,
                   const RenderOptions& opts) {
  Image img(camera.width, camera.height, /*with_alpha=*/true);
  size_t n = img.pixel_count();
  parallel_chunks(n, opts.workers, [&](size_t, size_t begin, size_t end) {
    RayTape tape;
    for (size_t p = begin; p < end; ++p) {
      int px = static_cast<int>(p % camera.width);
      int py = static_cast<int>(p / camera.width);
      eval_ray(model, camera_ray(camera, px, py), opts, tape);
      Vec3 c = tape.color + opts.background * tape.tau_out;
      img.at(px, py, 0) = c.x;
      img.at(px, py, 1) = c.y;
      img.at(px, py, 2) = c.z;
      img.alpha[p] = 1.0 - tape.tau_out;
    }
  });
  return img;
}

Image plot_points(const SceneModel& model, const Camera& camera,
                  const RenderOptions& opts) {
  const KdVoxelTree& tree = model.tree_ref();
  if (!model.cloud.has_normals)
    throw ContractError("plot_points: cloud has no normals");
  size_t n = model.cloud.size();

  // Fixed per-point thickness: mean distance to the nearest other point.
  // With duplicate positions the second heap entry is still a distance to
  // some other index, so the mean stays well defined.
  double spacing = 0.0;
  {
    uint32_t idx[2];
    double sqd[2];
    for (size_t j = 0; j < n; ++j) {
      tree.knn_into(model.cloud.positions[j], 2, idx, sqd);
      spacing += std::sqrt(sqd[1]);
    }
    spacing /= static_cast<double>(n);
  }

  struct Splat {
    double depth;
    uint32_t idx;
  };
  std::vector<std::vector<Splat>> buckets(static_cast<size_t>(camera.width) * camera.height);
  for (size_t j = 0; j < n; ++j) {
    double ix, iy, depth;
    if (!project_point(camera, model.cloud.positions[j], ix, iy, depth)) continue;
    int px = static_cast<int>(std::floor(ix));
    int py = static_cast<int>(std::floor(iy));
    if (px < 0 || px >= camera.width || py < 0 || py >= camera.height) continue;
    buckets[static_cast<size_t>(py) * camera.width + px].push_back(
        {depth, static_cast<uint32_t>(j)});
  }

  Image img(camera.width, camera.height, /*with_alpha=*/true);
  for (size_t p = 0; p < buckets.size(); ++p) {
    auto& bucket = buckets[p];
    std::sort(bucket.begin(), bucket.end(), [](const Splat& a, const Splat& b) {
      return a.depth != b.depth ? a.depth < b.depth : a.idx < b.idx;
    });
    Vec3 c{0, 0, 0};
    double tau = 1.0;
    for (const Splat& sp : bucket) {
      ActivatedAppearance app = activate(model.cloud.params[sp.idx]);
      Vec3 view = normalized(camera.pos - model.cloud.positions[sp.idx]);
      Vec3 shade = phong_color(app, model.cloud.normals[sp.idx], view, model.lighting);
      double trans = std::exp(-spacing * app.sigma);
      c += (tau * (1.0 - trans)) * shade;
      tau *= trans;
    }
    c += opts.background * tau;
    int px = static_cast<int>(p % camera.width);
    int py = static_cast<int>(p / camera.width);
    img.at(px, py, 0) = c.x;
    img.at(px, py, 1) = c.y;
    img.at(px, py, 2) = c.z;
    img.alpha[p] = 1.0 - tau;
  }
  return img;
}

}  // namespace kdvr
