#include "kdvr/core.hpp"

#include <limits>

namespace kdvr {

Mat3 Mat3::axis_angle(const Vec3& axis, double radians) {
  Vec3 u = normalized(axis);
  double c = std::cos(radians), s = std::sin(radians), t = 1.0 - c;
  Mat3 r;
  r.m = {c + u.x * u.x * t,       u.x * u.y * t - u.z * s, u.x * u.z * t + u.y * s,
         u.y * u.x * t + u.z * s, c + u.y * u.y * t,       u.y * u.z * t - u.x * s,
         u.z * u.x * t - u.y * s, u.z * u.y * t + u.x * s, c + u.z * u.z * t};
  return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
      r(i, j) = s;
    }
  return r;
}

Mat3 Mat3::operator+(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
  return r;
}

Mat3 Mat3::operator*(double s) const {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
  return r;
}

Mat3& Mat3::operator+=(const Mat3& o) {
  for (int i = 0; i < 9; ++i) m[i] += o.m[i];
  return *this;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
  return r;
}

RigidTransform RigidTransform::then(const RigidTransform& outer) const {
  RigidTransform r;
  r.rot = outer.rot * rot;
  r.trans = outer.rot * trans + outer.trans;
  return r;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform r;
  r.rot = rot.transposed();
  r.trans = -(r.rot * trans);
  return r;
}

Aabb Aabb::empty() {
  Aabb b;
  double inf = std::numeric_limits<double>::infinity();
  b.min = {inf, inf, inf};
  b.max = {-inf, -inf, -inf};
  return b;
}

void Aabb::grow(const Vec3& p) {
  min.x = std::min(min.x, p.x);
  min.y = std::min(min.y, p.y);
  min.z = std::min(min.z, p.z);
  max.x = std::max(max.x, p.x);
  max.y = std::max(max.y, p.y);
  max.z = std::max(max.z, p.z);
}

void Aabb::grow(const Aabb& b) {
  grow(b.min);
  grow(b.max);
}

Aabb Aabb::padded(double pad_ratio, double pad_floor) const {
  Aabb r = *this;
  for (int a = 0; a < 3; ++a) {
    double pad = pad_ratio * (max[a] - min[a]) + pad_floor;
    r.min[a] -= pad;
    r.max[a] += pad;
  }
  return r;
}

std::optional<RayHitInterval> ray_aabb_intersect(const Ray& ray, const Aabb& box) {
  double t_lo = 0.0;  // clip to t >= 0 up front
  double t_hi = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double o = ray.origin[a], d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.min[a] || o > box.max[a]) return std::nullopt;
      continue;
    }
    double inv = 1.0 / d;
    double t0 = (box.min[a] - o) * inv;
    double t1 = (box.max[a] - o) * inv;
    if (t0 > t1) std::swap(t0, t1);
    t_lo = std::max(t_lo, t0);
    t_hi = std::min(t_hi, t1);
    if (t_lo > t_hi) return std::nullopt;
  }
  return RayHitInterval{t_lo, t_hi};
}

Ray camera_ray(const Camera& cam, int px, int py) {
  if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
    throw ContractError("camera_ray: pixel (" + std::to_string(px) + ", " + std::to_string(py) +
                        ") outside " + std::to_string(cam.width) + "x" +
                        std::to_string(cam.height));
  Vec3 v{(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0};
  return Ray{cam.pos, normalized(cam.rot * v)};
}

bool project_point(const Camera& cam, const Vec3& p, double& ix, double& iy, double& depth) {
  Vec3 local = cam.rot.transposed() * (p - cam.pos);
  if (local.z <= 0.0) return false;
  depth = local.z;
  ix = cam.fx * local.x / local.z + cam.cx;
  iy = cam.fy * local.y / local.z + cam.cy;
  return true;
}

void IndexedPointCloud::resize(size_t n) {
  positions.resize(n);
  confidences.resize(n, 1.0);
  params.resize(n);
  if (has_normals) normals.resize(n);
}

void IndexedPointCloud::validate() const {
  size_t n = positions.size();
  if (confidences.size() != n || params.size() != n)
    throw ContractError("point cloud: parallel arrays disagree in length");
  if (has_normals && normals.size() != n)
    throw ContractError("point cloud: normals flagged present but sized " +
                        std::to_string(normals.size()) + " for " + std::to_string(n) +
                        " points");
  for (size_t i = 0; i < n; ++i)
    if (!(confidences[i] > 0.0))
      throw ContractError("point cloud: confidence at index " + std::to_string(i) +
                          " is not positive");
}

uint64_t Rng::mix(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over the combined pair
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u strictly positive
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 0.0);
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double a = 2.0 * 3.14159265358979323846 * v;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

uint64_t Rng::uniform_index(uint64_t n) {
  if (n == 0) throw ContractError("uniform_index: n must be positive");
  uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
  uint64_t x;
  do {
    x = gen();
  } while (x >= limit);
  return x % n;
}

Vec3 Rng::unit_vector() {
  // Marsaglia rejection on the disk
  for (;;) {
    double a = uniform(-1.0, 1.0), b = uniform(-1.0, 1.0);
    double s = a * a + b * b;
    if (s >= 1.0 || s == 0.0) continue;
    double m = 2.0 * std::sqrt(1.0 - s);
    return {a * m, b * m, 1.0 - 2.0 * s};
  }
}

}  // namespace kdvr
