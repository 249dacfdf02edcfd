#include "kdvr/shading.hpp"

#include <Eigen/Dense>

namespace kdvr {

namespace {
constexpr double kShinMin = 1.0;
constexpr double kShinMax = 128.0;
}  // namespace

ActivatedAppearance activate(const ParamVector& raw) {
  ActivatedAppearance a;
  a.sigma = softplus(raw[kChDensity]);
  for (int c = 0; c < 3; ++c) {
    a.diffuse[c] = logistic(raw[kChDiffuse + c]);
    a.specular[c] = logistic(raw[kChSpecular + c]);
    a.tint[c] = logistic(raw[kChTint + c]);
  }
  a.shininess = std::clamp(std::exp(raw[kChRoughness]), kShinMin, kShinMax);
  return a;
}

ParamVector activate_backward(const ParamVector& raw, const ActivatedAppearance& act,
                              const Vec3& d_diffuse, const Vec3& d_specular, const Vec3& d_tint,
                              double d_sigma, double d_shin) {
  ParamVector g{};
  g[kChDensity] = d_sigma * logistic(raw[kChDensity]);
  for (int c = 0; c < 3; ++c) {
    g[kChDiffuse + c] = d_diffuse[c] * act.diffuse[c] * (1.0 - act.diffuse[c]);
    g[kChSpecular + c] = d_specular[c] * act.specular[c] * (1.0 - act.specular[c]);
    g[kChTint + c] = d_tint[c] * act.tint[c] * (1.0 - act.tint[c]);
  }
  double e = std::exp(raw[kChRoughness]);
  g[kChRoughness] = (e > kShinMin && e < kShinMax) ? d_shin * e : 0.0;
  return g;
}

Vec3 phong_color(const ActivatedAppearance& app, const Vec3& normal, const Vec3& view_dir,
                 const LightingEnv& lights) {
  Vec3 diffuse_acc = lights.ambient;
  Vec3 specular_acc{0, 0, 0};
  const Vec3 reflect = 2.0 * dot(normal, view_dir) * normal - view_dir;
  for (const DirectionalLight& l : lights.directional) {
    double h = dot(normal, l.direction);
    if (h > 0.0) diffuse_acc += l.color * h;
    double g = dot(reflect, l.direction);
    if (g > 0.0) specular_acc += l.color * std::pow(g, app.shininess);
  }
  return cmul(app.diffuse, diffuse_acc) + cmul(cmul(app.tint, app.specular), specular_acc);
}

void phong_backward(const ActivatedAppearance& app, const Vec3& normal, const Vec3& view_dir,
                    const LightingEnv& lights, const Vec3& d_color, Vec3& d_diffuse,
                    Vec3& d_specular, Vec3& d_tint, double& d_shin, Vec3* d_view) {
  Vec3 diffuse_acc = lights.ambient;
  Vec3 specular_acc{0, 0, 0};
  const Vec3 reflect = 2.0 * dot(normal, view_dir) * normal - view_dir;
  struct LightTerm {
    double g, p;
    const DirectionalLight* l;
  };
  std::vector<LightTerm> terms;
  terms.reserve(lights.directional.size());
  for (const DirectionalLight& l : lights.directional) {
    double h = dot(normal, l.direction);
    if (h > 0.0) diffuse_acc += l.color * h;
    double g = dot(reflect, l.direction);
    double p = g > 0.0 ? std::pow(g, app.shininess) : 0.0;
    if (g > 0.0) specular_acc += l.color * p;
    terms.push_back({g, p, &l});
  }

  d_diffuse = cmul(d_color, diffuse_acc);
  d_specular = cmul(cmul(d_color, app.tint), specular_acc);
  d_tint = cmul(cmul(d_color, app.specular), specular_acc);
  const Vec3 d_spec_acc = cmul(cmul(d_color, app.tint), app.specular);
  d_shin = 0.0;
  if (d_view) *d_view = {0, 0, 0};
  for (const LightTerm& t : terms) {
    if (t.g <= 0.0) continue;
    double dp = dot(d_spec_acc, t.l->color);
    d_shin += dp * t.p * std::log(t.g);
    if (d_view) {
      double dg = dp * app.shininess * std::pow(t.g, app.shininess - 1.0);
      // d(reflect.dir)/d(view) = 2(n.dir)n - dir
      *d_view += dg * (2.0 * dot(normal, t.l->direction) * normal - t.l->direction);
    }
  }
}

// --------------------------------------------------------------------------

namespace {

// Deterministic sign fix for exactly-orthogonal orientation ties.
Vec3 tie_break_sign(const Vec3& n) {
  if (n.z != 0.0) return n.z > 0.0 ? n : -n;
  if (n.y != 0.0) return n.y > 0.0 ? n : -n;
  if (n.x != 0.0) return n.x > 0.0 ? n : -n;
  return {0, 0, 1};
}

Vec3 orient(const Vec3& n, const Vec3& to_ref) {
  double d = dot(n, to_ref);
  if (d > 0.0) return n;
  if (d < 0.0) return -n;
  return tie_break_sign(n);
}

}  // namespace

std::vector<uint32_t> estimate_normals(IndexedPointCloud& cloud, const KdVoxelTree& tree,
                                       int K_n, const Vec3& orient_ref) {
  const size_t n = cloud.size();
  if (n == 0) throw SizeError("estimate_normals: empty cloud");
  const int k = std::min<int>(K_n, static_cast<int>(n));
  if (k < 1) throw ContractError("estimate_normals: K_n must be positive");
  cloud.normals.assign(n, Vec3{0, 0, 1});
  cloud.has_normals = true;

  std::vector<uint32_t> degenerate;
  std::vector<uint32_t> idx(k);
  std::vector<double> sqd(k);
  for (size_t j = 0; j < n; ++j) {
    tree.knn_into(cloud.positions[j], k, idx.data(), sqd.data());
    Vec3 mean{0, 0, 0};
    for (int i = 0; i < k; ++i) mean += cloud.positions[idx[i]];
    mean = mean / static_cast<double>(k);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int i = 0; i < k; ++i) {
      const Vec3 d = cloud.positions[idx[i]] - mean;
      Eigen::Vector3d e(d.x, d.y, d.z);
      cov += e * e.transpose();
    }
    cov /= static_cast<double>(k);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Eigen::Vector3d evals = eig.eigenvalues();  // ascending
    const Vec3 to_ref = orient_ref - cloud.positions[j];

    const double scale = evals[2];
    if (!(scale > 1e-30)) {
      // Coincident neighborhood: no plane, point toward the reference.
      double len = norm(to_ref);
      cloud.normals[j] = len > 0.0 ? to_ref / len : Vec3{0, 0, 1};
      degenerate.push_back(static_cast<uint32_t>(j));
      continue;
    }
    if (evals[1] <= 1e-12 * scale) {
      // Collinear: unique normal orthogonal to the line, closest to the
      // reference direction.
      const Eigen::Vector3d lv = eig.eigenvectors().col(2);
      const Vec3 u{lv[0], lv[1], lv[2]};
      Vec3 w = to_ref - dot(to_ref, u) * u;
      double len = norm(w);
      if (len > 1e-15 * std::max(1.0, norm(to_ref))) {
        cloud.normals[j] = w / len;
      } else {
        Vec3 helper = std::abs(u.x) <= std::abs(u.y) && std::abs(u.x) <= std::abs(u.z)
                          ? Vec3{1, 0, 0}
                          : (std::abs(u.y) <= std::abs(u.z) ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
        cloud.normals[j] = tie_break_sign(normalized(cross(u, helper)));
      }
      degenerate.push_back(static_cast<uint32_t>(j));
      continue;
    }
    const Eigen::Vector3d nv = eig.eigenvectors().col(0);
    cloud.normals[j] = orient(normalized(Vec3{nv[0], nv[1], nv[2]}), to_ref);
  }
  return degenerate;
}

std::vector<uint32_t> estimate_normals(IndexedPointCloud& cloud, int K_n, const Vec3& orient_ref) {
  KdVoxelTree tree = KdVoxelTree::build(cloud);
  return estimate_normals(cloud, tree, K_n, orient_ref);
}

}  // namespace kdvr
