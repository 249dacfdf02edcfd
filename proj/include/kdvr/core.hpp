#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdvr {

// ---------------------------------------------------------------------------
// Errors. Every failure mode the pipeline reports deliberately is typed so
// callers (and the CLI) can map it to a diagnostic without string matching.

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct SizeError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FormatVersionError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra. Doubles throughout; the whole pipeline is
// 64-bit so renders and checkpoints are bit-reproducible.

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
// Component-wise product; colors are Vec3 in linear space.
inline Vec3 cmul(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm2(v)); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 r;
    r.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
    return r;
  }
  static Mat3 from_cols(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    Mat3 r;
    r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
    return r;
  }
  // Rodrigues; axis need not be unit.
  static Mat3 axis_angle(const Vec3& axis, double radians);

  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }
  Vec3 row(int r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }
  Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const;
  Mat3 operator+(const Mat3& o) const;
  Mat3 operator*(double s) const;
  Mat3& operator+=(const Mat3& o);
  Mat3 transposed() const;
  bool operator==(const Mat3& o) const { return m == o.m; }
};

// Frobenius inner product; used by the IST backward pass.
inline double fdot(const Mat3& a, const Mat3& b) {
  double s = 0.0;
  for (int i = 0; i < 9; ++i) s += a.m[i] * b.m[i];
  return s;
}

struct RigidTransform {
  Mat3 rot = Mat3::identity();
  Vec3 trans;

  Vec3 apply(const Vec3& p) const { return rot * p + trans; }
  Vec3 apply_dir(const Vec3& d) const { return rot * d; }
  RigidTransform then(const RigidTransform& outer) const;  // outer * this
  RigidTransform inverse() const;
};

// ---------------------------------------------------------------------------

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length by convention
};

struct Aabb {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};

  static Aabb empty();
  bool valid() const { return min.x <= max.x && min.y <= max.y && min.z <= max.z; }
  void grow(const Vec3& p);
  void grow(const Aabb& b);
  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
           p.z <= max.z;
  }
  Vec3 extents() const { return max - min; }
  double diagonal() const { return norm(max - min); }
  double mean_edge() const {
    Vec3 e = extents();
    return (e.x + e.y + e.z) / 3.0;
  }
  // Expanded by pad_ratio * extent + pad_floor per side, per axis.
  Aabb padded(double pad_ratio, double pad_floor) const;
};

struct RayHitInterval {
  double t_near = 0.0;
  double t_far = 0.0;
};

// Parametric overlap of ray with box, clipped to t >= 0. Zero direction
// components are handled by slab membership, not IEEE division.
std::optional<RayHitInterval> ray_aabb_intersect(const Ray& ray, const Aabb& box);

// ---------------------------------------------------------------------------
// Camera: x right, y down, z forward; rot/pos are camera-to-world.

struct Camera {
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3 rot = Mat3::identity();
  Vec3 pos;
};

// Ray through the center of pixel (px, py). Out-of-range pixels are a
// contract violation.
Ray camera_ray(const Camera& cam, int px, int py);

// World point -> continuous image coordinates; false if behind the camera.
bool project_point(const Camera& cam, const Vec3& p, double& ix, double& iy, double& depth);

// ---------------------------------------------------------------------------

struct Image {
  int width = 0, height = 0;
  std::vector<double> rgb;    // 3 * width * height, row-major, linear space
  std::vector<double> alpha;  // empty or width * height

  Image() = default;
  Image(int w, int h, bool with_alpha = false)
      : width(w), height(h), rgb(static_cast<size_t>(3) * w * h, 0.0) {
    if (with_alpha) alpha.assign(static_cast<size_t>(w) * h, 0.0);
  }
  double& at(int x, int y, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// ---------------------------------------------------------------------------
// Point cloud. params rows are raw (pre-activation) appearance channels; see
// shading.hpp for the channel layout. Confidence gamma is stored directly
// (positive); the optimizer owns the log-space view.

inline constexpr int kParamChannels = 11;
using ParamVector = std::array<double, kParamChannels>;

struct IndexedPointCloud {
  std::vector<Vec3> positions;
  std::vector<double> confidences;
  std::vector<ParamVector> params;
  std::vector<Vec3> normals;
  bool has_normals = false;

  size_t size() const { return positions.size(); }
  void resize(size_t n);
  // Throws ContractError unless all parallel arrays agree and gammas are > 0.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. Distribution code is hand-rolled on top of mt19937_64 so
// outputs do not depend on the standard library's distribution internals.

struct Rng {
  std::mt19937_64 gen;

  explicit Rng(uint64_t seed) : gen(seed) {}

  // Derive a decorrelated stream seed (splitmix64 over the pair).
  static uint64_t mix(uint64_t a, uint64_t b);

  double uniform() {  // [0, 1)
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  uint64_t uniform_index(uint64_t n);  // [0, n), unbiased
  Vec3 unit_vector();

  template <typename T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kdvr
